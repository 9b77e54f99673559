# shepherd/cli.py
from __future__ import annotations

import argparse
import asyncio
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import settings
from .async_utils import async_map_progress
from .attribution import Attribution, background_from_dataset, run_method, sample_background
from .errors import VALIDATION_ERRORS, ConfigError, DataError, ShepherdError
from .evaluation import (
    SweepRecord,
    bench,
    complexity_audit,
    patch_sweep_stats,
    similarity_matrix,
    sweep_trend,
)
from .patching import PatchSpec, dimension_report, patchify
from .predictor import IntegratedModel, Predictor, accuracy, fit_reference, load_mlp
from .runconfig import RunConfig, load_run_config
from .runlog import append_run_log
from .simgen import Dataset, build_dataset, fault_classes
from .storage import (
    DATASET_MANIFEST,
    ingest_signals,
    load_attribution,
    load_dataset,
    load_reference,
    load_rep,
    read_json,
    save_attribution,
    save_dataset,
    save_reference,
    save_rep,
    write_csv_once,
    write_json_once,
)
from .transforms import DomainTag, axis_coordinates, forward

MANIFEST = "manifest.json"


def eprint(*a: Any) -> None:
    print(*a, file=sys.stderr)


# ---------------------------------------------------------------------------
# Config resolution
# ---------------------------------------------------------------------------

def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_run_config(args.config)
    workers = args.workers
    if workers is None and args.config is None:
        workers = settings.default_workers()
    cfg = cfg.override(seed=args.seed, workers=workers)
    cfg = cfg.override("output", dir=args.out)
    cfg = cfg.override("transform", domain=getattr(args, "domain", None))
    cfg = cfg.override("patch", shape=getattr(args, "patch", None))
    if getattr(args, "levels", None):
        cfg = cfg.override("patch", levels=tuple(PatchSpec.parse(l).label() for l in args.levels.split(",")))
    methods = getattr(args, "method", None)
    cfg = cfg.override(
        "attribution",
        methods=tuple(methods) if methods else None,
        k_p=getattr(args, "kp", None),
        scale_factors=_floats(getattr(args, "scale_factors", None)),
        samples=_ints(getattr(args, "samples", None)),
        max_samples=getattr(args, "max_samples", None),
        reference=getattr(args, "reference", None),
        repetitions=getattr(args, "repetitions", None),
    )
    cfg = cfg.override("background", per_class=getattr(args, "background_per_class", None))
    cfg = cfg.override("dataset", fs=getattr(args, "fs", None), per_class=getattr(args, "per_class", None))
    if getattr(args, "dataset", None):
        cfg = cfg.override("dataset", source="load", path=args.dataset)
    if getattr(args, "predictor", None):
        source = "reference" if args.predictor.endswith(".json") else "mlp"
        cfg = cfg.override("predictor", source=source, path=args.predictor)
    return cfg.validate()


def _floats(text: Optional[str]) -> Optional[Tuple[float, ...]]:
    if text is None:
        return None
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"cannot parse number list {text!r}") from None


def _ints(text: Optional[str]) -> Optional[Tuple[int, ...]]:
    if text is None:
        return None
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"cannot parse index list {text!r}") from None


def _quiet(args: argparse.Namespace) -> bool:
    return bool(getattr(args, "quiet", False)) or settings.quiet()


def simulate_dataset(cfg: RunConfig) -> Dataset:
    ds = cfg.dataset
    return build_dataset(
        fault_classes(ds.snr_db, ds.beta),
        ds.per_class,
        n=ds.length,
        fs=ds.fs,
        train_frac=ds.train_frac,
        seed=cfg.seed,
    )


def resolve_dataset(cfg: RunConfig) -> Dataset:
    ds = cfg.dataset
    if ds.source == "load":
        return load_dataset(ds.path)
    if ds.source == "ingest":
        return ingest_signals(ds.files, ds.fs, ds.labels, train_frac=ds.train_frac, seed=cfg.seed)
    return simulate_dataset(cfg)


def resolve_predictor(cfg: RunConfig, dataset: Dataset) -> Tuple[Predictor, bool]:
    """Returns (predictor, freshly fitted)."""
    p = cfg.predictor
    if p.source == "reference":
        return load_reference(p.path), False
    if p.source == "mlp":
        return load_mlp(p.path), False
    return fit_reference(dataset, gamma=p.gamma), True


def _dataset_summary(ds: Dataset) -> None:
    eprint(f"{len(ds.signals)} samples, fs={ds.fs:g} Hz, length {len(ds.signals[0])}")
    for c, name in enumerate(ds.class_names):
        in_class = ds.labels == c
        eprint(f"  {name}: {int(in_class.sum())} ({int((in_class & ds.train).sum())} train)")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    ds = simulate_dataset(cfg)
    out = Path(cfg.output.dir)
    path = save_dataset(out, ds, manifest={"command": "simulate", "config": cfg.to_dict()})
    _dataset_summary(ds)
    eprint(f"Wrote {path}")
    append_run_log("simulate", samples=len(ds.signals), seed=cfg.seed, out=str(out))
    return 0


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    labels = None
    if args.labels:
        labels = read_json(args.labels)
        if not isinstance(labels, dict):
            raise DataError(f"{args.labels}: expected a JSON object mapping file to class")
    ds = ingest_signals(args.paths, args.fs, labels, train_frac=cfg.dataset.train_frac, seed=cfg.seed)
    out = Path(cfg.output.dir)
    path = save_dataset(
        out, ds, manifest={"command": "ingest", "sources": [str(p) for p in args.paths], "config": cfg.to_dict()}
    )
    _dataset_summary(ds)
    eprint(f"Wrote {path}")
    append_run_log("ingest", samples=len(ds.signals), files=len(args.paths), out=str(out))
    return 0


def _analysis_samples(cfg: RunConfig, ds: Dataset) -> List[int]:
    a = cfg.attribution
    idx = list(a.samples) if a.samples is not None else [int(i) for i in ds.test_indices()]
    bad = [i for i in idx if not 0 <= i < len(ds.signals)]
    if bad:
        raise DataError(f"sample indices out of range: {bad}")
    if a.max_samples is not None:
        idx = idx[: a.max_samples]
    return sorted(idx)


async def cmd_attribute(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    ds = resolve_dataset(cfg)
    predictor, fitted = resolve_predictor(cfg, ds)
    if fitted and ds.test_indices().size:
        eprint(f"Reference predictor test accuracy: {accuracy(predictor, ds):.4f}")

    domain = DomainTag.parse(cfg.transform.domain)
    spec = PatchSpec.parse(cfg.patch.shape)
    stft = cfg.transform.stft
    bg_idx = sample_background(ds, cfg.background.per_class, cfg.background_seed)
    samples = _analysis_samples(cfg, ds)
    if not samples:
        raise DataError("no samples selected for attribution")

    first = forward(domain, ds.signals[samples[0]], stft, env_max_hz=cfg.transform.env_max_hz)
    d = dimension_report(first.z.shape, spec, 0)
    eprint(
        f"Domain {domain.value}, z {first.z.shape}, patch {spec.label()}: d={d} "
        f"(+{first.remain_count} remains), n={bg_idx.size} backgrounds, {len(samples)} samples"
    )

    jobs = [(s, m) for s in samples for m in sorted(cfg.attribution.methods)]

    def run_job(job: Tuple[int, str]) -> Attribution:
        s, method = job
        rep = forward(domain, ds.signals[s], stft, env_max_hz=cfg.transform.env_max_hz)
        model = IntegratedModel(predictor, rep, spec)
        bg = background_from_dataset(ds, bg_idx, rep, spec)
        attr = run_method(
            method,
            model,
            patchify(rep.z, spec),
            bg,
            k_p=cfg.attribution.k_p,
            scale_factors=cfg.attribution.scale_factors,
            seed=cfg.seed,
            max_d=cfg.attribution.max_d,
        )
        return replace(attr, sample_index=s)

    async def worker(job: Tuple[int, str]) -> Attribution:
        return await asyncio.to_thread(run_job, job)

    results = await async_map_progress(
        jobs, worker, concurrency=cfg.workers, desc="attribute", quiet=_quiet(args)
    )

    out = Path(cfg.output.dir)
    files = []
    for s, method in jobs:
        attr = results[(s, method)]
        name = f"attributions/{s:05d}_{method}.json"
        save_attribution(out / name, attr, extra={"sample_label": int(ds.labels[s])})
        files.append({"sample": s, "label": int(ds.labels[s]), "method": method, "file": name})
        audit = complexity_audit(attr)
        eprint(
            f"  sample {s:5d} {method:11s} d={attr.d} calls={attr.model_calls}"
            f"{'' if audit.passed else f' (expected {audit.predicted})'} time={attr.wall_time:.3f}s"
        )
    reps = []
    for s in samples:
        rep = forward(domain, ds.signals[s], stft, env_max_hz=cfg.transform.env_max_hz)
        rep_json, _ = save_rep(out / f"reps/{s:05d}", rep)
        reps.append({"sample": s, "file": rep_json.relative_to(out).as_posix()})
    if fitted:
        save_reference(out / "predictor.json", predictor)
    write_json_once(
        out / MANIFEST,
        {
            "command": "attribute",
            "config": cfg.to_dict(),
            "domain": domain.value,
            "patch": list(spec.shape),
            "d": d,
            "class_names": list(ds.class_names),
            "background": [int(i) for i in bg_idx],
            "files": files,
            "reps": reps,
        },
    )
    eprint(f"Wrote {len(files)} attributions to {out}")
    append_run_log("attribute", jobs=len(jobs), out=str(out), seed=cfg.seed, workers=cfg.workers)
    return 0


def _load_run(run_dir: Path) -> Tuple[Dict[str, Any], Dict[str, Dict[int, Attribution]], Dict[int, int]]:
    head = read_json(run_dir / MANIFEST)
    if head.get("command") != "attribute":
        raise DataError(f"{run_dir}: not an attribute output directory")
    by_method: Dict[str, Dict[int, Attribution]] = {}
    labels: Dict[int, int] = {}
    for entry in head.get("files", []):
        attr = load_attribution(run_dir / entry["file"])
        by_method.setdefault(entry["method"], {})[int(entry["sample"])] = attr
        labels[int(entry["sample"])] = int(entry["label"])
    return head, by_method, labels


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    ref_method = cfg.attribution.reference
    out = Path(cfg.output.dir)
    summary: List[Dict[str, Any]] = []
    sweep: List[SweepRecord] = []
    for run_dir in sorted(Path(p) for p in args.runs):
        head, by_method, labels = _load_run(run_dir)
        if ref_method not in by_method:
            raise DataError(f"{run_dir}: no {ref_method} attributions to compare against")
        ref = by_method[ref_method]
        patch = "x".join(str(p) for p in head["patch"])
        for method in sorted(m for m in by_method if m != ref_method):
            cand = by_method[method]
            missing = sorted(set(ref) ^ set(cand))
            if missing:
                raise DataError(f"{run_dir}: {method} and {ref_method} cover different samples {missing}")
            order = sorted(ref)
            report = similarity_matrix(
                [ref[s] for s in order], [cand[s] for s in order], [labels[s] for s in order], head.get("class_names")
            )
            name = f"similarity_{method}_{head['domain']}_{patch}.csv"
            write_csv_once(out / name, report.to_frame(), index=True)
            summary.append(
                {
                    "method": method,
                    "reference": ref_method,
                    "domain": head["domain"],
                    "patch": patch,
                    "d": head["d"],
                    "samples": len(order),
                    "mean": report.mean,
                    "variance": report.variance,
                    "excluded": report.excluded,
                    "file": name,
                }
            )
            for s in order:
                row = report.samples[order.index(s)]
                for v in row[~np.isnan(row)]:
                    sweep.append(SweepRecord(method, head["domain"], patch, int(head["d"]), float(v)))
            eprint(f"  {method} vs {ref_method} [{head['domain']} {patch}]: mean {report.mean:.4f}")

    write_csv_once(out / "similarity_summary.csv", pd.DataFrame(summary))
    if sweep:
        stats = patch_sweep_stats(sweep)
        write_csv_once(out / "sweep_stats.csv", stats)
        trend = sweep_trend(stats, "shep")
        if not trend.empty:
            write_csv_once(out / "sweep_trend.csv", trend)
    write_json_once(out / MANIFEST, {"command": "compare", "runs": [str(p) for p in args.runs], "config": cfg.to_dict()})
    eprint(f"Wrote {len(summary)} similarity tables to {out}")
    append_run_log("compare", runs=len(args.runs), tables=len(summary), out=str(out))
    return 0


async def cmd_bench(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    ds = resolve_dataset(cfg)
    predictor, _ = resolve_predictor(cfg, ds)
    levels = cfg.patch.levels or (cfg.patch.shape,)
    domain = cfg.transform.domain
    bg_idx = sample_background(ds, cfg.background.per_class, cfg.background_seed)
    samples = _analysis_samples(cfg, ds)
    if not samples:
        raise DataError("no sample to benchmark")
    methods = list(cfg.attribution.methods)

    def run_cell(level: str) -> pd.DataFrame:
        return bench(
            predictor,
            ds,
            samples[0],
            bg_idx,
            [(domain, level)],
            methods,
            repetitions=cfg.attribution.repetitions,
            k_p=cfg.attribution.k_p,
            scale_factors=cfg.attribution.scale_factors,
            seed=cfg.seed,
            stft=cfg.transform.stft,
            env_max_hz=cfg.transform.env_max_hz,
        )

    async def worker(level: str) -> pd.DataFrame:
        return await asyncio.to_thread(run_cell, level)

    results = await async_map_progress(list(levels), worker, concurrency=cfg.workers, desc="bench", quiet=_quiet(args))
    table = pd.concat([results[level] for level in levels], ignore_index=True)
    out = Path(cfg.output.dir)
    write_csv_once(out / "bench.csv", table)
    write_csv_once(out / "bench_calls.csv", table[["method", "domain", "patch", "d", "n", "calls_measured", "calls_predicted"]])
    write_json_once(out / MANIFEST, {"command": "bench", "sample": samples[0], "config": cfg.to_dict()})
    for row in table.itertuples():
        eprint(f"  {row.method:11s} {row.domain} {row.patch:>6s} d={row.d:5d} calls={row.calls_measured:8d} median={row.median_s:.4f}s")
    eprint(f"Wrote {out / 'bench.csv'}")
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    path = Path(args.path)
    if path.is_dir() and (path / DATASET_MANIFEST).exists():
        ds = load_dataset(path)
        _dataset_summary(ds)
        return 0
    data = read_json(path)
    if isinstance(data, dict) and "values" in data and "method" in data:
        attr = load_attribution(path)
        print(f"method      {attr.method}")
        print(f"domain      {attr.domain}  patch {'x'.join(map(str, attr.patch))}  z {attr.source_shape}")
        print(f"d={attr.d}  K={attr.k}  n={attr.n}  seed={attr.seed}")
        print(f"model_calls {attr.model_calls}  wall_time {attr.wall_time:.4f}s")
        names = attr.class_names or tuple(str(c) for c in range(attr.k))
        grid = patchify(np.zeros(attr.source_shape), attr.patch) if attr.source_shape and attr.d else None
        for c, name in enumerate(names):
            tops = []
            for i, v in attr.top_patches(c, args.top):
                where = f"[{', '.join(f'{lo}:{hi}' for lo, hi in grid.patches[i].bounds)}]" if grid else ""
                tops.append(f"#{i}{where}={v:+.4g}")
            print(f"  {name}: {'  '.join(tops)}")
        return 0
    if isinstance(data, dict) and {"domain", "z_shape", "remains"} <= data.keys():
        rep = load_rep(path)
        meta = rep.meta
        print(f"domain      {rep.domain.value}  z {rep.z.shape}  remain_count {rep.remain_count}")
        print(f"signal      n={meta.n}  fs={meta.fs:g} Hz")
        if meta.stft is not None:
            print(f"stft        window {meta.stft.window}/{meta.stft.window_len}  hop {meta.stft.hop}  pad {meta.stft.pad}")
        if meta.env_bins is not None:
            limit = "Nyquist" if meta.env_max_hz is None else f"{meta.env_max_hz:g} Hz"
            print(f"envelope    {meta.env_bins} bins up to {limit}")
        for name, coords in axis_coordinates(rep):
            print(f"  axis {name}: {coords.size} points, {coords[0]:.4g} .. {coords[-1]:.4g}")
        for key, arr in rep.remains.items():
            print(f"  remain {key}: {arr.shape}")
        return 0
    if isinstance(data, dict) and data.get("kind") == "reference":
        p = load_reference(path)
        print(f"reference predictor: {p.n_classes} classes {list(p.class_names)}, gamma={p.gamma}")
        for b in p.bands:
            print(f"  band {b.name} ±{b.half_width:g} Hz")
        return 0
    if isinstance(data, dict):
        print(json.dumps(data, indent=2)[:4000])
        return 0
    raise DataError(f"{path}: unrecognized artifact")


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config; flags override its values.")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int, help="Parallel jobs (results do not depend on it).")
    common.add_argument("--out", help="Output directory (files are never overwritten).")
    common.add_argument("--quiet", action="store_true")

    pipeline = argparse.ArgumentParser(add_help=False)
    pipeline.add_argument("--dataset", help="Dataset directory written by simulate/ingest.")
    pipeline.add_argument("--predictor", help="Reference predictor JSON or MLP weight file.")
    pipeline.add_argument("--domain", help="freq|env|tf|cs")
    pipeline.add_argument("--patch", help="Patch shape, e.g. 48 or 2x5.")
    pipeline.add_argument("--method", action="append", help="Attribution method (repeatable).")
    pipeline.add_argument("--background-per-class", type=int)
    pipeline.add_argument("--kp", type=int, help="Permutations for shap_perm.")
    pipeline.add_argument("--scale-factors", help="Comma-separated factors for scale.")
    pipeline.add_argument("--samples", help="Comma-separated sample indices (default: test split).")
    pipeline.add_argument("--max-samples", type=int)

    p = argparse.ArgumentParser(prog="shepherd")
    sub = p.add_subparsers(dest="cmd", required=True)

    sim = sub.add_parser("simulate", parents=[common], help="Synthesize the three-class fault dataset.")
    sim.add_argument("--per-class", type=int)
    sim.add_argument("--fs", type=float)

    ing = sub.add_parser("ingest", parents=[common], help="Read external CSV/JSON signals into a dataset.")
    ing.add_argument("paths", nargs="+")
    ing.add_argument("--fs", type=float, required=True)
    ing.add_argument("--labels", help="JSON object mapping file path or name to class.")

    sub.add_parser("attribute", parents=[common, pipeline], help="Run attribution engines.")

    cmp_ = sub.add_parser("compare", parents=[common], help="Similarity of attribute runs to a reference method.")
    cmp_.add_argument("runs", nargs="+", help="Output directories of attribute runs.")
    cmp_.add_argument("--reference", help="Reference method (default shap_exact).")

    bn = sub.add_parser("bench", parents=[common, pipeline], help="Time engines over patch levels.")
    bn.add_argument("--levels", help="Comma-separated patch shapes.")
    bn.add_argument("--repetitions", type=int)

    ins = sub.add_parser("inspect", help="Summarize an artifact.")
    ins.add_argument("path")
    ins.add_argument("--top", type=int, default=5)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    settings.load_env()
    args = build_parser().parse_args(argv)
    try:
        if args.cmd == "simulate":
            return cmd_simulate(args)
        if args.cmd == "ingest":
            return cmd_ingest(args)
        if args.cmd == "attribute":
            return asyncio.run(cmd_attribute(args))
        if args.cmd == "compare":
            return cmd_compare(args)
        if args.cmd == "bench":
            return asyncio.run(cmd_bench(args))
        if args.cmd == "inspect":
            return cmd_inspect(args)
    except VALIDATION_ERRORS as e:
        eprint(f"error: {e}")
        return 2
    except ShepherdError as e:
        eprint(f"error: {e}")
        return 3
    except Exception as e:
        eprint(f"error: {type(e).__name__}: {e}")
        return 3
    return 0
