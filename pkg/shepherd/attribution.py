# shepherd/attribution.py
"""
Attribution engines over patched domain representations.

Every engine reduces to "evaluate the integrated model on a list of coalition masks
against every background" (or, for the baselines, on a list of perturbed z arrays).
Masks are evaluated in fixed-size chunks whose layout depends only on SHEPHERD_BATCH,
so results are identical for any worker count. Accumulation runs in coalition /
permutation order.

Method          model calls
shap_exact      2^d * n
shap_perm       2 * k_p * (d + 1) * n
shep_remove     d * n + 1
shep_add        d * n + n
shep            2 * d * n + n + 1
mask            d + 1
scale           k_s * d + 1
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import settings
from .async_utils import chunked, map_ordered
from .errors import ComplexityGuardError, DataError, InconsistencyError, ParameterError
from .patching import Patch, PatchRep, PatchSpec, patchify, unpatchify
from .predictor import IntegratedModel
from .runlog import append_run_log
from .simgen import Dataset, Signal
from .transforms import DomainRep, forward

DEFAULT_MAX_D = 15
DEFAULT_KP = 5
DEFAULT_SCALE_FACTORS: Tuple[float, ...] = (0.0, 0.5, 2.0)

METHODS: Tuple[str, ...] = ("mask", "scale", "shep", "shep_remove", "shep_add", "shap_perm", "shap_exact")
BACKGROUND_METHODS = frozenset({"shep", "shep_remove", "shep_add", "shap_perm", "shap_exact"})
BREAKDOWN_METHODS = frozenset({"shep", "shep_remove", "shep_add"})


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Coalition:
    d: int
    members: Tuple[int, ...]

    def __post_init__(self) -> None:
        members = tuple(sorted(int(i) for i in self.members))
        if len(set(members)) != len(members):
            raise ParameterError(f"coalition has duplicate members: {members}")
        if members and (members[0] < 0 or members[-1] >= self.d):
            raise ParameterError(f"coalition members must lie in [0, {self.d}), got {members}")
        object.__setattr__(self, "members", members)

    @classmethod
    def empty(cls, d: int) -> "Coalition":
        return cls(d, ())

    @classmethod
    def full(cls, d: int) -> "Coalition":
        return cls(d, tuple(range(d)))

    @classmethod
    def from_bits(cls, bits: int, d: int) -> "Coalition":
        if bits < 0 or bits >> d:
            raise ParameterError(f"bitset {bits:#x} does not fit {d} players")
        return cls(d, tuple(i for i in range(d) if bits >> i & 1))

    @property
    def bits(self) -> Optional[int]:
        if self.d > 64:
            return None
        return sum(1 << i for i in self.members)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.d, dtype=bool)
        m[list(self.members)] = True
        return m

    def __contains__(self, i: object) -> bool:
        return i in self.members

    def __len__(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class ShapleyWeights:
    """w(s) = s!(d-s-1)!/d! for s = 0..d-1."""

    d: int
    values: np.ndarray

    @classmethod
    def for_players(cls, d: int) -> "ShapleyWeights":
        if d < 1:
            return cls(d, np.zeros(0))
        return cls(d, np.array([1.0 / (d * math.comb(d - 1, s)) for s in range(d)]))

    def total(self) -> float:
        """Sum of w(|S|) over every S not containing a fixed player; 1 up to rounding."""
        return math.fsum(math.comb(self.d - 1, s) * float(w) for s, w in enumerate(self.values))


@dataclass(frozen=True)
class BackgroundSet:
    zs: np.ndarray  # (n, *z_shape)
    labels: np.ndarray  # (n,)
    spec: PatchSpec
    indices: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        zs = np.asarray(self.zs, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        if zs.ndim < 2 or zs.shape[0] < 1:
            raise ParameterError("background set needs at least one sample")
        if labels.shape != (zs.shape[0],):
            raise ParameterError(f"need one label per background, got {labels.shape} for {zs.shape[0]}")
        object.__setattr__(self, "zs", zs)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "spec", PatchSpec.parse(self.spec))
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))

    @property
    def n(self) -> int:
        return int(self.zs.shape[0])

    @property
    def z_shape(self) -> Tuple[int, ...]:
        return tuple(self.zs.shape[1:])

    def patched(self, k: int) -> PatchRep:
        return patchify(self.zs[k], self.spec)

    @classmethod
    def from_patches(cls, reps: Sequence[PatchRep], labels: Sequence[int]) -> "BackgroundSet":
        if not reps:
            raise ParameterError("background set needs at least one sample")
        first = reps[0]
        for r in reps[1:]:
            if not r.same_geometry(first):
                raise InconsistencyError("background patch geometries differ")
        return cls(np.stack([unpatchify(r) for r in reps]), np.asarray(labels), first.spec)

    @classmethod
    def from_signals(
        cls,
        signals: Sequence[Signal],
        labels: Sequence[int],
        like: DomainRep,
        spec: "PatchSpec | str",
        indices: Sequence[int] = (),
    ) -> "BackgroundSet":
        """Transforms each background with the analyzed sample's domain settings."""
        zs = []
        for k, s in enumerate(signals):
            rep = forward(like.domain, s, like.meta.stft, env_max_hz=like.meta.env_max_hz)
            if rep.z.shape != like.z.shape:
                raise InconsistencyError(f"background {k} has z shape {rep.z.shape}, expected {like.z.shape}")
            zs.append(rep.z)
        if not zs:
            raise ParameterError("background set needs at least one sample")
        return cls(np.stack(zs), np.asarray(labels), PatchSpec.parse(spec), tuple(indices))


@dataclass(frozen=True)
class Attribution:
    values: np.ndarray  # (d, K)
    method: str
    domain: str
    patch: Tuple[int, ...]
    model_calls: int
    wall_time: float
    source_shape: Tuple[int, ...] = ()
    n: int = 0
    seed: Optional[int] = None
    k_p: Optional[int] = None
    k_s: Optional[int] = None
    scale_factors: Optional[Tuple[float, ...]] = None
    class_names: Tuple[str, ...] = ()
    per_background: Optional[np.ndarray] = field(default=None, repr=False)  # (n, d, K)
    background_labels: Optional[Tuple[int, ...]] = None
    sample_index: Optional[int] = None

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ParameterError(f"attribution values must be (d, K), got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ParameterError(f"{self.method} produced non-finite attribution values")
        if self.method not in METHODS:
            raise ParameterError(f"unknown method {self.method!r}")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "patch", tuple(int(p) for p in self.patch))
        object.__setattr__(self, "source_shape", tuple(int(p) for p in self.source_shape))

    @property
    def d(self) -> int:
        return int(self.values.shape[0])

    @property
    def k(self) -> int:
        return int(self.values.shape[1])

    def top_patches(self, cls: int, k: int = 5) -> List[Tuple[int, float]]:
        col = self.values[:, cls]
        order = np.argsort(-np.abs(col), kind="stable")[:k]
        return [(int(i), float(col[i])) for i in order]

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "method": self.method,
            "domain": self.domain,
            "patch": list(self.patch),
            "source_shape": list(self.source_shape),
            "d": self.d,
            "K": self.k,
            "n": self.n,
            "seed": self.seed,
            "model_calls": self.model_calls,
            "wall_time_s": self.wall_time,
            "values": self.values.tolist(),
        }
        if self.k_p is not None:
            out["k_p"] = self.k_p
        if self.k_s is not None:
            out["k_s"] = self.k_s
            out["scale_factors"] = list(self.scale_factors or ())
        if self.class_names:
            out["class_names"] = list(self.class_names)
        if self.sample_index is not None:
            out["sample_index"] = self.sample_index
        if self.per_background is not None:
            out["per_background"] = self.per_background.tolist()
            out["background_labels"] = list(self.background_labels or ())
        return out

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "Attribution":
        try:
            values = np.asarray(d["values"], dtype=float)
            if values.size == 0:
                values = values.reshape(0, int(d.get("K", 0)))
            pb = d.get("per_background")
            return cls(
                values=values,
                method=str(d["method"]),
                domain=str(d["domain"]),
                patch=tuple(d["patch"]),
                model_calls=int(d["model_calls"]),
                wall_time=float(d["wall_time_s"]),
                source_shape=tuple(d.get("source_shape") or ()),
                n=int(d.get("n", 0)),
                seed=d.get("seed"),
                k_p=d.get("k_p"),
                k_s=d.get("k_s"),
                scale_factors=tuple(d["scale_factors"]) if d.get("scale_factors") is not None else None,
                class_names=tuple(d.get("class_names") or ()),
                per_background=np.asarray(pb, dtype=float) if pb is not None else None,
                background_labels=tuple(d["background_labels"]) if d.get("background_labels") is not None else None,
                sample_index=d.get("sample_index"),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"malformed attribution record: {e}") from None


@dataclass(frozen=True)
class BackgroundBreakdown:
    rows: np.ndarray  # (n, d, K)
    mean: np.ndarray  # (d, K), the "M" row
    labels: Tuple[int, ...]
    by_class: Dict[int, np.ndarray]


# ---------------------------------------------------------------------------
# Coalition plumbing
# ---------------------------------------------------------------------------

def composite(x: PatchRep, b: PatchRep, s: Coalition) -> PatchRep:
    """Patch i from x when i is in s, otherwise from b. Remains always stay with x's model."""
    if not x.same_geometry(b):
        raise InconsistencyError("analyzed and background patch geometries differ")
    if s.d != x.count:
        raise InconsistencyError(f"coalition over {s.d} players, representation has {x.count} patches")
    members = set(s.members)
    patches = tuple(
        Patch(px.index, (px if i in members else pb).values.copy())
        for i, (px, pb) in enumerate(zip(x.patches, b.patches))
    )
    return PatchRep(x.source_shape, x.spec, patches)


def _check_inputs(m: IntegratedModel, x: PatchRep, bg: Optional[BackgroundSet]) -> np.ndarray:
    m.check_geometry(x)
    if bg is not None:
        if bg.z_shape != m.z_shape or bg.spec != m.spec:
            raise InconsistencyError(
                f"background geometry {bg.z_shape}/{bg.spec.shape} does not match model {m.z_shape}/{m.spec.shape}"
            )
    return unpatchify(x)


def _evaluate_masks(
    m: IntegratedModel,
    x_z: np.ndarray,
    bg_z: np.ndarray,
    masks: np.ndarray,
    workers: int,
) -> np.ndarray:
    """(M, d) boolean coalitions -> (M, n, K) model outputs, one call per (mask, background)."""
    n = bg_z.shape[0]
    if masks.shape[0] == 0:
        return np.zeros((0, n, m.predictor.n_classes))
    per_chunk = max(1, settings.batch_size() // n)
    labels = m.labels

    def run(chunk: np.ndarray) -> np.ndarray:
        keep = chunk[:, labels][:, np.newaxis]  # (c, 1, *z)
        zs = np.where(keep, x_z, bg_z[np.newaxis])  # (c, n, *z)
        out = m.evaluate_z(zs.reshape((-1,) + x_z.shape))
        return out.reshape(chunk.shape[0], n, -1)

    return np.concatenate(map_ordered(run, chunked(masks, per_chunk), workers=workers), axis=0)


def _all_masks(d: int) -> np.ndarray:
    codes = np.arange(1 << d, dtype=np.int64)
    return ((codes[:, np.newaxis] >> np.arange(d)) & 1).astype(bool)


def value_function(
    m: IntegratedModel,
    x: PatchRep,
    bg: BackgroundSet,
    s: Coalition,
    *,
    workers: int = 1,
) -> np.ndarray:
    """v(S) = mean_b M(composite(x, b, S)) - mean_b M(b)."""
    x_z = _check_inputs(m, x, bg)
    empty = np.zeros((1, m.d), dtype=bool)
    if len(s) == 0:
        out = _evaluate_masks(m, x_z, bg.zs, empty, workers).mean(axis=1)
        return out[0] - out[0]
    out = _evaluate_masks(m, x_z, bg.zs, np.concatenate([s.mask()[np.newaxis], empty]), workers).mean(axis=1)
    return out[0] - out[1]


def coalition_table(
    m: IntegratedModel,
    x: PatchRep,
    bg: BackgroundSet,
    *,
    workers: int = 1,
    max_d: int = DEFAULT_MAX_D,
) -> np.ndarray:
    """
    E[M(x^S)] for every S, indexed by bitset (bit i = patch i). The grand coalition entry
    is the single value M(x), the n composites there being all equal to x.
    """
    d = m.d
    if d > max_d:
        raise ComplexityGuardError(d, bg.n, max_d)
    x_z = _check_inputs(m, x, bg)
    out = _evaluate_masks(m, x_z, bg.zs, _all_masks(d), workers)
    table = out.mean(axis=1)
    table[-1] = out[-1, 0]
    return table


# ---------------------------------------------------------------------------
# Engines
# ---------------------------------------------------------------------------

def _finish(
    m: IntegratedModel,
    method: str,
    values: np.ndarray,
    calls_before: int,
    t0: float,
    bg: Optional[BackgroundSet] = None,
    **extra: Any,
) -> Attribution:
    attr = Attribution(
        values=values,
        method=method,
        domain=m.domain.value,
        patch=m.spec.shape,
        model_calls=m.call_count - calls_before,
        wall_time=time.perf_counter() - t0,
        source_shape=m.z_shape,
        n=bg.n if bg is not None else 0,
        background_labels=tuple(int(c) for c in bg.labels) if bg is not None and "per_background" in extra else None,
        class_names=tuple(getattr(m.predictor, "class_names", ()) or ()),
        **extra,
    )
    append_run_log(
        "attribution",
        method=method,
        domain=attr.domain,
        patch=list(attr.patch),
        d=attr.d,
        n=attr.n,
        k_p=attr.k_p,
        k_s=attr.k_s,
        seed=attr.seed,
        model_calls=attr.model_calls,
        wall_time_s=round(attr.wall_time, 6),
    )
    return attr


def _empty(m: IntegratedModel, method: str, bg: Optional[BackgroundSet], **extra: Any) -> Attribution:
    k = m.predictor.n_classes
    if method in BREAKDOWN_METHODS and bg is not None:
        extra["per_background"] = np.zeros((bg.n, 0, k))
    return _finish(m, method, np.zeros((0, k)), m.call_count, time.perf_counter(), bg, **extra)


def shap_exact(
    m: IntegratedModel,
    x: PatchRep,
    bg: BackgroundSet,
    *,
    max_d: int = DEFAULT_MAX_D,
    workers: int = 1,
) -> Attribution:
    """
    Full enumeration: psi_i = sum over S not containing i of w(|S|) (E[S + i] - E[S]).
    Each of the 2^d coalitions is evaluated once per background.
    """
    if m.d == 0:
        return _empty(m, "shap_exact", bg)
    if m.d > max_d:
        raise ComplexityGuardError(m.d, bg.n, max_d)
    t0 = time.perf_counter()
    before = m.call_count
    table = coalition_table(m, x, bg, workers=workers, max_d=max_d)

    d = m.d
    weights = ShapleyWeights.for_players(d).values
    codes = np.arange(1 << d, dtype=np.int64)
    sizes = np.array([bin(c).count("1") for c in codes])
    psi = np.zeros((d, table.shape[1]))
    for i in range(d):
        without = codes[(codes >> i & 1) == 0]
        w = weights[sizes[without]][:, np.newaxis]
        psi[i] = (w * (table[without | (1 << i)] - table[without])).sum(axis=0)
    return _finish(m, "shap_exact", psi, before, t0, bg)


def shap_permutation(
    m: IntegratedModel,
    x: PatchRep,
    bg: BackgroundSet,
    k_p: int = DEFAULT_KP,
    rng: "np.random.Generator | int | None" = None,
    *,
    workers: int = 1,
) -> Attribution:
    """
    Antithetic permutation sampling: each of k_p random orders is walked forward and
    reversed, and every patch is credited with its marginal as it joins the prefix.
    """
    if k_p < 1:
        raise ParameterError(f"k_p must be >= 1, got {k_p}")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    if m.d == 0:
        return _empty(m, "shap_perm", bg, k_p=k_p, seed=seed)
    t0 = time.perf_counter()
    before = m.call_count
    x_z = _check_inputs(m, x, bg)
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)

    d = m.d
    orders: List[np.ndarray] = []
    for _ in range(k_p):
        p = gen.permutation(d)
        orders.extend([p, p[::-1]])
    masks = np.zeros((len(orders), d + 1, d), dtype=bool)
    for t, order in enumerate(orders):
        for j in range(1, d + 1):
            masks[t, j] = masks[t, j - 1]
            masks[t, j, order[j - 1]] = True

    table = _evaluate_masks(m, x_z, bg.zs, masks.reshape(-1, d), workers).mean(axis=1)
    table = table.reshape(len(orders), d + 1, -1)
    psi = np.zeros((d, table.shape[-1]))
    for t, order in enumerate(orders):
        psi[order] += table[t, 1:] - table[t, :-1]
    psi /= len(orders)
    return _finish(m, "shap_perm", psi, before, t0, bg, k_p=k_p, seed=seed)


def _leave_one_out(d: int) -> np.ndarray:
    return ~np.eye(d, dtype=bool)


def _singletons(d: int) -> np.ndarray:
    return np.eye(d, dtype=bool)


def shep_remove(m: IntegratedModel, x: PatchRep, bg: BackgroundSet, *, workers: int = 1) -> Attribution:
    """psi_i = M(x) - mean_b M(composite(x, b, U - {i}))."""
    if m.d == 0:
        return _empty(m, "shep_remove", bg)
    t0 = time.perf_counter()
    before = m.call_count
    x_z = _check_inputs(m, x, bg)
    a = m.evaluate_z(x_z[np.newaxis])[0]
    removed = _evaluate_masks(m, x_z, bg.zs, _leave_one_out(m.d), workers)  # (d, n, K)
    rows = a - np.swapaxes(removed, 0, 1)
    return _finish(m, "shep_remove", rows.mean(axis=0), before, t0, bg, per_background=rows)


def shep_add(m: IntegratedModel, x: PatchRep, bg: BackgroundSet, *, workers: int = 1) -> Attribution:
    """psi_i = mean_b [M(composite(x, b, {i})) - M(b)]."""
    if m.d == 0:
        return _empty(m, "shep_add", bg)
    t0 = time.perf_counter()
    before = m.call_count
    x_z = _check_inputs(m, x, bg)
    masks = np.concatenate([_singletons(m.d), np.zeros((1, m.d), dtype=bool)])
    out = _evaluate_masks(m, x_z, bg.zs, masks, workers)
    rows = np.swapaxes(out[:-1] - out[-1][np.newaxis], 0, 1)
    return _finish(m, "shep_add", rows.mean(axis=0), before, t0, bg, per_background=rows)


def shep(m: IntegratedModel, x: PatchRep, bg: BackgroundSet, *, workers: int = 1) -> Attribution:
    """(remove + add) / 2, sharing M(x) and the background evaluations."""
    if m.d == 0:
        return _empty(m, "shep", bg)
    t0 = time.perf_counter()
    before = m.call_count
    x_z = _check_inputs(m, x, bg)
    d = m.d
    a = m.evaluate_z(x_z[np.newaxis])[0]
    masks = np.concatenate([_leave_one_out(d), _singletons(d), np.zeros((1, d), dtype=bool)])
    out = _evaluate_masks(m, x_z, bg.zs, masks, workers)
    rm = a - np.swapaxes(out[:d], 0, 1)
    add = np.swapaxes(out[d : 2 * d] - out[-1][np.newaxis], 0, 1)
    values = (rm.mean(axis=0) + add.mean(axis=0)) / 2
    return _finish(m, "shep", values, before, t0, bg, per_background=(rm + add) / 2)


def _perturbed(m: IntegratedModel, x_z: np.ndarray, factors: Sequence[float]) -> np.ndarray:
    """x_z followed by, per factor, a copy with patch i's z scaled, for i = 0..d-1."""
    zs = [x_z]
    for f in factors:
        for i in range(m.d):
            z = x_z.copy()
            z[m.labels == i] *= f
            zs.append(z)
    return np.stack(zs)


def mask_baseline(m: IntegratedModel, x: PatchRep, *, workers: int = 1) -> Attribution:
    """psi_i = M(x) - M(x with patch i zeroed). No background."""
    if m.d == 0:
        return _empty(m, "mask", None)
    t0 = time.perf_counter()
    before = m.call_count
    x_z = _check_inputs(m, x, None)
    out = m.evaluate_many(_perturbed(m, x_z, (0.0,)), workers=workers)
    return _finish(m, "mask", out[0] - out[1:], before, t0)


def scale_baseline(
    m: IntegratedModel,
    x: PatchRep,
    factors: Sequence[float] = DEFAULT_SCALE_FACTORS,
    *,
    workers: int = 1,
) -> Attribution:
    """psi_i = mean over factors s of M(x) - M(x with patch i's z multiplied by s)."""
    factors = tuple(float(f) for f in factors)
    if not factors:
        raise ParameterError("scale baseline needs at least one factor")
    if any(not math.isfinite(f) or f < 0 for f in factors):
        raise ParameterError(f"scale factors must be finite and >= 0 (z is a power), got {factors}")
    if m.d == 0:
        return _empty(m, "scale", None, k_s=len(factors), scale_factors=factors)
    t0 = time.perf_counter()
    before = m.call_count
    x_z = _check_inputs(m, x, None)
    out = m.evaluate_many(_perturbed(m, x_z, factors), workers=workers)
    diffs = out[0] - out[1:].reshape(len(factors), m.d, -1)
    return _finish(m, "scale", diffs.mean(axis=0), before, t0, k_s=len(factors), scale_factors=factors)


# ---------------------------------------------------------------------------
# Breakdown, background sampling, dispatch
# ---------------------------------------------------------------------------

def per_background_breakdown(attr: Attribution) -> BackgroundBreakdown:
    if attr.method not in BREAKDOWN_METHODS or attr.per_background is None:
        raise ParameterError(f"no per-background breakdown for method {attr.method!r}; use one of {sorted(BREAKDOWN_METHODS)}")
    rows = attr.per_background
    labels = tuple(attr.background_labels or ())
    by_class: Dict[int, np.ndarray] = {}
    if labels:
        lab = np.asarray(labels)
        for c in sorted(set(labels)):
            by_class[int(c)] = rows[lab == c].mean(axis=0)
    return BackgroundBreakdown(rows=rows, mean=rows.mean(axis=0), labels=labels, by_class=by_class)


def sample_background(
    dataset: Dataset,
    per_class: int,
    seed: Optional[int],
    *,
    exclude: Iterable[int] = (),
) -> np.ndarray:
    """per_class train-split indices from every class, drawn with a seeded generator, sorted."""
    if per_class < 1:
        raise ParameterError(f"background per_class must be >= 1, got {per_class}")
    skip = set(int(i) for i in exclude)
    picked: List[int] = []
    for c in range(dataset.n_classes):
        pool = np.array([i for i in dataset.train_indices() if dataset.labels[i] == c and i not in skip], dtype=int)
        if pool.size < per_class:
            raise DataError(
                f"class {dataset.class_names[c]!r} has {pool.size} training samples, background needs {per_class}"
            )
        rng = np.random.default_rng(np.random.SeedSequence([0 if seed is None else int(seed), 0xB6, c]))
        picked.extend(int(i) for i in rng.choice(pool, size=per_class, replace=False))
    return np.array(sorted(picked), dtype=int)


def background_from_dataset(
    dataset: Dataset,
    indices: Sequence[int],
    like: DomainRep,
    spec: "PatchSpec | str",
) -> BackgroundSet:
    return BackgroundSet.from_signals(
        [dataset.signals[i] for i in indices],
        [int(dataset.labels[i]) for i in indices],
        like,
        spec,
        indices=indices,
    )


def run_method(
    method: str,
    m: IntegratedModel,
    x: PatchRep,
    bg: Optional[BackgroundSet] = None,
    *,
    k_p: int = DEFAULT_KP,
    scale_factors: Sequence[float] = DEFAULT_SCALE_FACTORS,
    seed: Optional[int] = None,
    max_d: int = DEFAULT_MAX_D,
    workers: int = 1,
) -> Attribution:
    if method not in METHODS:
        raise ParameterError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    if method in BACKGROUND_METHODS and bg is None:
        raise ParameterError(f"method {method} needs a background set")
    engines: Dict[str, Callable[[], Attribution]] = {
        "mask": lambda: mask_baseline(m, x, workers=workers),
        "scale": lambda: scale_baseline(m, x, scale_factors, workers=workers),
        "shep": lambda: shep(m, x, bg, workers=workers),
        "shep_remove": lambda: shep_remove(m, x, bg, workers=workers),
        "shep_add": lambda: shep_add(m, x, bg, workers=workers),
        "shap_perm": lambda: shap_permutation(m, x, bg, k_p, seed, workers=workers),
        "shap_exact": lambda: shap_exact(m, x, bg, max_d=max_d, workers=workers),
    }
    return engines[method]()
