# shepherd/evaluation.py
from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .attribution import (
    DEFAULT_KP,
    DEFAULT_SCALE_FACTORS,
    METHODS,
    Attribution,
    background_from_dataset,
    run_method,
)
from .errors import DataError, InconsistencyError, ParameterError, UndefinedSimilarityError
from .patching import PatchSpec, patch_bounds, patchify
from .predictor import Band, IntegratedModel, Predictor
from .runlog import append_run_log
from .simgen import Dataset
from .transforms import DomainRep, DomainTag, StftConfig, axis_coordinates, forward

SIMILARITY_EPS = 1e-300


def cosine_similarity(p: np.ndarray, q: np.ndarray) -> float:
    """p.q / (|p||q|) over the row-major flattening of both arrays."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ParameterError(f"cannot compare attributions of shape {p.shape} and {q.shape}")
    a, b = p.ravel(), q.ravel()
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na <= SIMILARITY_EPS or nb <= SIMILARITY_EPS:
        raise UndefinedSimilarityError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


@dataclass(frozen=True)
class SimilarityReport:
    matrix: np.ndarray  # (C sample classes, K prediction classes), NaN where a cell has no pairs
    counts: np.ndarray  # (C, K)
    excluded: int
    mean: float
    variance: float
    class_names: Tuple[str, ...]
    method: str = ""
    reference_method: str = ""
    domain: str = ""
    patch: Tuple[int, ...] = ()
    samples: Optional[np.ndarray] = None  # (S, K) per-sample similarities, NaN when excluded

    def diagonal(self) -> np.ndarray:
        k = min(self.matrix.shape)
        return np.array([self.matrix[i, i] for i in range(k)])

    def to_frame(self) -> pd.DataFrame:
        rows = [f"sample:{c}" for c in self.class_names[: self.matrix.shape[0]]]
        cols = [f"pred:{c}" for c in self.class_names[: self.matrix.shape[1]]]
        return pd.DataFrame(self.matrix, index=rows, columns=cols)


def similarity_matrix(
    reference: Sequence[Attribution],
    candidate: Sequence[Attribution],
    sample_labels: Sequence[int],
    class_names: Optional[Sequence[str]] = None,
) -> SimilarityReport:
    """
    Entry (a, b): mean over class-a samples of the similarity between the candidate's and
    the reference's attribution columns for prediction class b. Zero columns are excluded
    and counted.
    """
    if not (len(reference) == len(candidate) == len(sample_labels)):
        raise DataError(
            f"unpaired inputs: {len(reference)} reference, {len(candidate)} candidate, {len(sample_labels)} labels"
        )
    if not reference:
        raise DataError("no attribution pairs to compare")
    first = reference[0]
    for j, (r, c) in enumerate(zip(reference, candidate)):
        if r.values.shape != c.values.shape or r.domain != c.domain or r.patch != c.patch:
            raise DataError(
                f"pair {j}: {r.method} {r.domain}/{r.patch} {r.values.shape} vs "
                f"{c.method} {c.domain}/{c.patch} {c.values.shape}"
            )
        if r.sample_index is not None and c.sample_index is not None and r.sample_index != c.sample_index:
            raise DataError(f"pair {j}: sample {r.sample_index} paired with sample {c.sample_index}")
        if r.values.shape[1] != first.values.shape[1]:
            raise DataError(f"pair {j}: class count {r.values.shape[1]} differs from {first.values.shape[1]}")

    k = first.k
    labels = np.asarray(sample_labels, dtype=int)
    names = tuple(class_names or first.class_names or [str(i) for i in range(max(k, labels.max() + 1))])
    n_sample_classes = max(len(names), int(labels.max()) + 1)

    per_sample = np.full((len(reference), k), np.nan)
    excluded = 0
    for j, (r, c) in enumerate(zip(reference, candidate)):
        for b in range(k):
            try:
                per_sample[j, b] = cosine_similarity(c.values[:, b], r.values[:, b])
            except UndefinedSimilarityError:
                excluded += 1

    matrix = np.full((n_sample_classes, k), np.nan)
    counts = np.zeros((n_sample_classes, k), dtype=int)
    for a in range(n_sample_classes):
        rows = per_sample[labels == a]
        for b in range(k):
            col = rows[:, b]
            col = col[~np.isnan(col)]
            counts[a, b] = col.size
            if col.size:
                matrix[a, b] = float(col.mean())

    valid = per_sample[~np.isnan(per_sample)]
    return SimilarityReport(
        matrix=matrix,
        counts=counts,
        excluded=excluded,
        mean=float(valid.mean()) if valid.size else float("nan"),
        variance=float(valid.var()) if valid.size else float("nan"),
        class_names=names,
        method=candidate[0].method,
        reference_method=first.method,
        domain=first.domain,
        patch=first.patch,
        samples=per_sample,
    )


# ---------------------------------------------------------------------------
# Patch-level sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRecord:
    method: str
    domain: str
    patch: str
    d: int
    similarity: float


def patch_sweep_stats(
    records: Iterable["SweepRecord | Mapping[str, Any]"],
    *,
    expected: Optional[Iterable[Tuple[str, str, str, int]]] = None,
) -> pd.DataFrame:
    """
    Mean and population variance of similarity per (method, domain, patch). Cells named
    in `expected` with no records come back with missing=True. Cells with a single run
    get variance NaN and few_runs=True.
    """
    rows = [r if isinstance(r, SweepRecord) else SweepRecord(**dict(r)) for r in records]
    frame = pd.DataFrame([r.__dict__ for r in rows], columns=["method", "domain", "patch", "d", "similarity"])
    frame = frame.astype({"d": int, "similarity": float})
    keys = ["method", "domain", "patch", "d"]
    stats = (
        frame.groupby(keys, sort=False)["similarity"]
        .agg(count="count", mean="mean", variance=lambda s: float(np.var(s.to_numpy())) if len(s) > 1 else np.nan)
        .reset_index()
    )
    if expected is not None:
        want = pd.DataFrame(list(expected), columns=keys)
        stats = want.merge(stats, on=keys, how="left")
        stats["count"] = stats["count"].fillna(0).astype(int)
    stats["missing"] = stats["count"] == 0
    stats["few_runs"] = stats["count"] == 1
    return stats.sort_values(["method", "domain", "d"], ascending=[True, True, False]).reset_index(drop=True)


def sweep_trend(stats: pd.DataFrame, method: str = "shep", column: str = "mean") -> pd.DataFrame:
    """Per domain: the statistic at the coarsest patch level (fewest patches) against the finest."""
    out = []
    sub = stats[(stats["method"] == method) & ~stats["missing"]]
    for domain, g in sub.groupby("domain", sort=True):
        g = g.sort_values("d")
        coarse, fine = g.iloc[0], g.iloc[-1]
        out.append(
            {
                "method": method,
                "domain": domain,
                "coarse_patch": coarse["patch"],
                "fine_patch": fine["patch"],
                f"coarse_{column}": coarse[column],
                f"fine_{column}": fine[column],
                "rising": bool(coarse[column] >= fine[column]),
            }
        )
    return pd.DataFrame(out)


# ---------------------------------------------------------------------------
# Complexity audit
# ---------------------------------------------------------------------------

def predicted_calls(
    method: str,
    d: int,
    n: int = 0,
    *,
    k_p: Optional[int] = None,
    k_s: Optional[int] = None,
) -> int:
    if method not in METHODS:
        raise ParameterError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    if d == 0:
        return 0
    if method == "mask":
        return d + 1
    if method == "scale":
        if not k_s:
            raise ParameterError("scale needs k_s")
        return k_s * d + 1
    if method == "shep":
        return 2 * d * n + n + 1
    if method == "shep_remove":
        return d * n + 1
    if method == "shep_add":
        return d * n + n
    if method == "shap_perm":
        if not k_p:
            raise ParameterError("shap_perm needs k_p")
        return 2 * k_p * (d + 1) * n
    return (2**d) * n


@dataclass(frozen=True)
class ComplexityAudit:
    method: str
    d: int
    n: int
    k_p: Optional[int]
    k_s: Optional[int]
    predicted: int
    measured: int
    wall_time: float

    @property
    def passed(self) -> bool:
        return self.predicted == self.measured


def complexity_audit(attr: Attribution) -> ComplexityAudit:
    predicted = predicted_calls(attr.method, attr.d, attr.n, k_p=attr.k_p, k_s=attr.k_s)
    return ComplexityAudit(
        method=attr.method,
        d=attr.d,
        n=attr.n,
        k_p=attr.k_p,
        k_s=attr.k_s,
        predicted=predicted,
        measured=attr.model_calls,
        wall_time=attr.wall_time,
    )


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------

def bench(
    predictor: Predictor,
    dataset: Dataset,
    sample_index: int,
    background: Sequence[int],
    cells: Sequence[Tuple["DomainTag | str", "PatchSpec | str"]],
    methods: Sequence[str],
    *,
    repetitions: int = 5,
    k_p: int = DEFAULT_KP,
    scale_factors: Sequence[float] = DEFAULT_SCALE_FACTORS,
    seed: Optional[int] = 0,
    stft: Optional[StftConfig] = None,
    env_max_hz: Optional[float] = 600.0,
    workers: int = 1,
) -> pd.DataFrame:
    """
    Median wall time per (method, domain, patch) over `repetitions` runs after one discarded
    warm-up, alongside measured and predicted call counts.
    """
    if repetitions < 1:
        raise ParameterError(f"repetitions must be >= 1, got {repetitions}")
    stft = stft or StftConfig()
    sig = dataset.signals[sample_index]
    rows: List[Dict[str, Any]] = []
    for domain, patch in cells:
        rep = forward(domain, sig, stft, env_max_hz=env_max_hz)
        spec = PatchSpec.parse(patch)
        model = IntegratedModel(predictor, rep, spec)
        x = patchify(rep.z, spec)
        bg = background_from_dataset(dataset, background, rep, spec)
        for method in methods:
            times: List[float] = []
            calls: Optional[int] = None
            for r in range(repetitions + 1):
                attr = run_method(
                    method, model, x, bg, k_p=k_p, scale_factors=scale_factors, seed=seed, workers=workers
                )
                if r == 0:
                    continue
                if calls is not None and attr.model_calls != calls:
                    raise InconsistencyError(f"{method} call count changed between repetitions")
                calls = attr.model_calls
                times.append(attr.wall_time)
            audit = complexity_audit(attr)
            rows.append(
                {
                    "method": method,
                    "domain": rep.domain.value,
                    "patch": spec.label(),
                    "d": model.d,
                    "n": bg.n,
                    "repetitions": repetitions,
                    "median_s": statistics.median(times),
                    "min_s": min(times),
                    "calls_measured": calls,
                    "calls_predicted": audit.predicted,
                }
            )
    append_run_log("bench", cells=len(cells), methods=list(methods), repetitions=repetitions)
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# Band contribution
# ---------------------------------------------------------------------------

_BAND_AXIS = {DomainTag.FREQ: "f_hz", DomainTag.ENV: "alpha_hz"}


def band_contribution(
    attr: Attribution,
    rep: DomainRep,
    spec: "PatchSpec | str",
    bands: Sequence[Band],
) -> pd.DataFrame:
    """
    Summed attribution per (band, class) over patches whose extent along the band's axis
    overlaps the band. Bands with no matching axis in this domain are left out.
    """
    patched = patchify(rep.z, PatchSpec.parse(spec))
    if patched.count != attr.d:
        raise InconsistencyError(f"attribution has {attr.d} patches, geometry gives {patched.count}")
    extents = patch_bounds(patched, axis_coordinates(rep))
    names = list(attr.class_names) or [str(i) for i in range(attr.k)]
    rows = {}
    for band in bands:
        axis = _BAND_AXIS[band.domain]
        if axis not in extents[0]:
            continue
        lo, hi = band.center - band.half_width, band.center + band.half_width
        hit = [i for i, ext in enumerate(extents) if ext[axis][0] <= hi and ext[axis][1] >= lo]
        rows[band.name] = attr.values[hit].sum(axis=0) if hit else np.zeros(attr.k)
    return pd.DataFrame.from_dict(rows, orient="index", columns=names)
