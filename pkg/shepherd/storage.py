# shepherd/storage.py
"""
On-disk artifacts. Every writer refuses to overwrite an existing file.

  dataset:      <dir>/dataset.json + <dir>/train.csv + <dir>/test.csv
                (one sample per row: index, label, class, then samples at %.17g)
  attribution:  JSON, see Attribution.to_dict
  domain rep:   <base>.json (domain, meta, remain keys) + <base>.npz (z and remains)
  reference:    JSON, see ReferencePredictor.to_dict
"""
from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .attribution import Attribution
from .errors import DataError, DegenerateInputError, IngestionError, LoadError, ParameterError
from .predictor import ReferencePredictor
from .runlog import to_jsonable
from .simgen import Dataset, Signal, standardize, stratified_split
from .transforms import DomainRep, DomainTag, RepMeta, StftConfig

FLOAT_FORMAT = "%.17g"
DATASET_MANIFEST = "dataset.json"
SPLITS = ("train", "test")


# ---------------------------------------------------------------------------
# Write-once primitives
# ---------------------------------------------------------------------------

def _open_new(path: Path, mode: str = "x"):
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        return open(path, mode, encoding="utf-8" if "b" not in mode else None)
    except FileExistsError:
        raise DataError(f"refusing to overwrite existing output {path}") from None


def write_text_once(path: "str | Path", text: str) -> Path:
    path = Path(path)
    with _open_new(path) as f:
        f.write(text)
    return path


def write_json_once(path: "str | Path", data: Any) -> Path:
    return write_text_once(path, json.dumps(data, indent=2, default=to_jsonable) + "\n")


def write_csv_once(path: "str | Path", frame: pd.DataFrame, *, index: bool = False) -> Path:
    return write_text_once(path, frame.to_csv(index=index, float_format=FLOAT_FORMAT))


def read_json(path: "str | Path") -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"missing artifact {path}") from None
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: not valid JSON ({e})") from None


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

def save_dataset(out_dir: "str | Path", ds: Dataset, *, manifest: Optional[Dict[str, Any]] = None) -> Path:
    out_dir = Path(out_dir)
    files = {}
    for split in SPLITS:
        mask = ds.train if split == "train" else ~ds.train
        idx = np.flatnonzero(mask)
        x = ds.matrix(mask)
        frame = pd.DataFrame(x, columns=[f"s{j}" for j in range(x.shape[1])] if idx.size else [])
        frame.insert(0, "class", [ds.class_names[ds.labels[i]] for i in idx])
        frame.insert(0, "label", ds.labels[idx])
        frame.insert(0, "index", idx)
        files[split] = write_csv_once(out_dir / f"{split}.csv", frame).name
    counts = {name: int(np.sum(ds.labels == c)) for c, name in enumerate(ds.class_names)}
    head = {
        "fs": ds.fs,
        "n_samples": len(ds.signals),
        "length": len(ds.signals[0]) if ds.signals else 0,
        "class_names": list(ds.class_names),
        "class_counts": counts,
        "seed": ds.seed,
        "files": files,
        **(manifest or {}),
    }
    return write_json_once(out_dir / DATASET_MANIFEST, head)


def load_dataset(src: "str | Path") -> Dataset:
    src = Path(src)
    head = read_json(src / DATASET_MANIFEST if src.is_dir() else src)
    base = src if src.is_dir() else src.parent
    try:
        fs = float(head["fs"])
        names = tuple(head["class_names"])
        files = head.get("files") or {s: f"{s}.csv" for s in SPLITS}
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"{base}: malformed dataset manifest ({e})") from None

    by_index: Dict[int, Tuple[Signal, int, bool]] = {}
    for split in SPLITS:
        path = base / files[split]
        try:
            frame = pd.read_csv(path, float_precision="round_trip")
        except FileNotFoundError:
            raise DataError(f"missing dataset split {path}") from None
        except pd.errors.EmptyDataError:
            continue
        values = frame.drop(columns=["index", "label", "class"]).to_numpy(dtype=float)
        for row, (i, lab) in enumerate(zip(frame["index"], frame["label"])):
            by_index[int(i)] = (Signal(values[row], fs), int(lab), split == "train")
    if sorted(by_index) != list(range(len(by_index))):
        raise DataError(f"{base}: sample indices are not contiguous")
    ordered = [by_index[i] for i in range(len(by_index))]
    return Dataset(
        signals=tuple(s for s, _, _ in ordered),
        labels=np.array([lab for _, lab, _ in ordered], dtype=int),
        class_names=names,
        train=np.array([t for _, _, t in ordered], dtype=bool),
        seed=head.get("seed"),
    )


# ---------------------------------------------------------------------------
# Ingestion of external signals
# ---------------------------------------------------------------------------

_PARSER_LINE = re.compile(r"line (\d+)")
_EXPORT_HEADER = ("index", "label", "class")
_SAMPLE_COLUMN = re.compile(r"s\d+")


def _read_csv_samples(path: Path) -> Tuple[List[np.ndarray], Optional[List[str]]]:
    """
    One sample per row, or a single column holding one sample. A split written by
    save_dataset is recognised by its header: only the s* columns are read, the class
    column is returned alongside, and rows count data rows.
    """
    try:
        frame = pd.read_csv(path, header=None, dtype=str, keep_default_na=False, skip_blank_lines=True)
    except pd.errors.EmptyDataError:
        raise IngestionError("file is empty", path=str(path)) from None
    except pd.errors.ParserError as e:
        m = _PARSER_LINE.search(str(e))
        raise IngestionError(f"ragged row: {e}", path=str(path), row=int(m.group(1)) - 1 if m else None) from None

    cells = frame.to_numpy(dtype=object)
    classes: Optional[List[str]] = None
    if cells.shape[1] >= len(_EXPORT_HEADER) and tuple(str(c) for c in cells[0, :3]) == _EXPORT_HEADER:
        keep = [j for j, h in enumerate(cells[0]) if _SAMPLE_COLUMN.fullmatch(str(h))]
        classes = [str(c) for c in cells[1:, 2]]
        cells = cells[1:, keep]
    single_column = classes is None and cells.shape[1] == 1 and cells.shape[0] > 1
    out: List[np.ndarray] = []
    for r, row in enumerate(cells):
        vals = []
        for c, cell in enumerate(row):
            if cell is None or (isinstance(cell, float) and np.isnan(cell)) or str(cell).strip() == "":
                raise IngestionError(f"ragged row (column {c} is empty)", path=str(path), row=r)
            try:
                vals.append(float(cell))
            except ValueError:
                raise IngestionError(f"non-numeric cell {cell!r} in column {c}", path=str(path), row=r) from None
        out.append(np.array(vals))
    if single_column:
        return [np.concatenate(out)], None
    return out, classes


def _read_json_samples(path: Path) -> List[np.ndarray]:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise IngestionError(f"not valid JSON ({e})", path=str(path)) from None
    if not isinstance(data, list) or not data:
        raise IngestionError("expected a non-empty JSON array", path=str(path))
    rows = data if isinstance(data[0], list) else [data]
    out = []
    for r, row in enumerate(rows):
        if not isinstance(row, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in row):
            raise IngestionError("expected an array of numbers", path=str(path), row=r)
        out.append(np.asarray(row, dtype=float))
    return out


def ingest_signals(
    paths: Sequence["str | Path"],
    fs: Optional[float],
    labels: Optional[Mapping[str, str]] = None,
    *,
    train_frac: float = 0.7,
    seed: Optional[int] = 0,
) -> Dataset:
    """
    Reads CSV/JSON signal files into a standardized Dataset. Each file's class comes from
    `labels` (keyed by file path or file name), else from the class column of a
    save_dataset split, else from its parent directory name.
    """
    if fs is None:
        raise IngestionError("sample rate is required (--fs)")
    if not (fs > 0):
        raise IngestionError(f"sample rate must be positive, got {fs}")
    if not paths:
        raise IngestionError("no input files")

    signals: List[Signal] = []
    classes: List[str] = []
    length: Optional[int] = None
    for raw in sorted(Path(p) for p in paths):
        row_classes: Optional[List[str]] = None
        if raw.suffix.lower() == ".json":
            samples = _read_json_samples(raw)
        elif raw.suffix.lower() in (".csv", ".txt"):
            samples, row_classes = _read_csv_samples(raw)
        else:
            raise IngestionError(f"unsupported file type {raw.suffix!r}", path=str(raw))
        if labels is not None:
            name = labels.get(str(raw), labels.get(raw.name))
            if name is None:
                raise IngestionError("no label given for this file", path=str(raw))
        else:
            name = raw.parent.name or "unlabeled"
        for r, x in enumerate(samples):
            if length is None:
                length = x.size
            elif x.size != length:
                raise IngestionError(f"sample has {x.size} values, earlier samples have {length}", path=str(raw), row=r)
            try:
                signals.append(standardize(Signal(x, fs)))
            except (ParameterError, DegenerateInputError) as e:
                raise IngestionError(str(e), path=str(raw), row=r) from None
            classes.append(str(name if labels is not None or row_classes is None else row_classes[r]))

    names = tuple(sorted(set(classes)))
    lab = np.array([names.index(c) for c in classes], dtype=int)
    return Dataset(
        signals=tuple(signals),
        labels=lab,
        class_names=names,
        train=stratified_split(lab, train_frac, seed),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Attributions, representations, predictors
# ---------------------------------------------------------------------------

def save_attribution(path: "str | Path", attr: Attribution, *, extra: Optional[Dict[str, Any]] = None) -> Path:
    return write_json_once(path, {**attr.to_dict(), **(extra or {})})


def load_attribution(path: "str | Path") -> Attribution:
    data = read_json(path)
    if not isinstance(data, dict):
        raise DataError(f"{path}: expected a JSON object")
    try:
        return Attribution.from_dict(data)
    except ParameterError as e:
        raise DataError(f"{path}: {e}") from None


def save_rep(base: "str | Path", rep: DomainRep) -> Tuple[Path, Path]:
    base = Path(base)
    meta = rep.meta
    head = {
        "domain": rep.domain.value,
        "z_shape": list(rep.z.shape),
        "remains": list(rep.remains),
        "n": meta.n,
        "fs": meta.fs,
        "env_bins": meta.env_bins,
        "env_max_hz": meta.env_max_hz,
        "stft": None if meta.stft is None else {
            "window_len": meta.stft.window_len,
            "hop": meta.stft.hop,
            "window": meta.stft.window,
            "pad": meta.stft.pad,
        },
    }
    npz = base.with_suffix(".npz")
    with _open_new(npz, "xb") as f:
        np.savez(f, z=rep.z, **{f"remain_{k}": v for k, v in rep.remains.items()})
    return write_json_once(base.with_suffix(".json"), head), npz


def load_rep(base: "str | Path") -> DomainRep:
    base = Path(base)
    head = read_json(base.with_suffix(".json"))
    try:
        with np.load(base.with_suffix(".npz")) as arrs:
            z = arrs["z"]
            remains = {k: arrs[f"remain_{k}"] for k in head["remains"]}
        stft = StftConfig(**head["stft"]) if head.get("stft") else None
        meta = RepMeta(int(head["n"]), float(head["fs"]), stft, head.get("env_bins"), head.get("env_max_hz"))
        return DomainRep(DomainTag.parse(head["domain"]), z, remains, meta)
    except FileNotFoundError:
        raise DataError(f"missing array file {base.with_suffix('.npz')}") from None
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"{base}: malformed representation ({e})") from None


def save_reference(path: "str | Path", p: ReferencePredictor) -> Path:
    return write_json_once(path, p.to_dict())


def load_reference(path: "str | Path") -> ReferencePredictor:
    data = read_json(path)
    if not isinstance(data, dict) or data.get("kind") != "reference":
        raise LoadError(f"{path}: not a reference predictor file")
    return ReferencePredictor.from_dict(data)
