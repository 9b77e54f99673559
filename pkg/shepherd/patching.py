# shepherd/patching.py
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import List, Sequence, Tuple

import numpy as np

from .errors import InconsistencyError, ParameterError


@dataclass(frozen=True)
class PatchSpec:
    shape: Tuple[int, ...]
    boundary: str = "truncate"

    def __post_init__(self) -> None:
        shape = (int(self.shape),) if isinstance(self.shape, (int, np.integer)) else tuple(int(s) for s in self.shape)
        if not shape or any(s < 1 for s in shape):
            raise ParameterError(f"patch dims must all be >= 1, got {shape}")
        if self.boundary != "truncate":
            raise ParameterError(f"unsupported boundary policy {self.boundary!r}")
        object.__setattr__(self, "shape", shape)

    @classmethod
    def parse(cls, text: "str | int | Sequence[int] | PatchSpec") -> "PatchSpec":
        """'48' -> (48,), '2x5' -> (2, 5)."""
        if isinstance(text, PatchSpec):
            return text
        if isinstance(text, (int, np.integer)) or not isinstance(text, str):
            return cls(text)
        try:
            return cls(tuple(int(p) for p in text.lower().replace(",", "x").split("x")))
        except ValueError:
            raise ParameterError(f"cannot parse patch spec {text!r}; use 'L' or 'HxW'") from None

    def label(self) -> str:
        return "x".join(str(s) for s in self.shape)


@dataclass(frozen=True)
class Patch:
    index: Tuple[slice, ...]
    values: np.ndarray

    @property
    def bounds(self) -> Tuple[Tuple[int, int], ...]:
        return tuple((s.start, s.stop) for s in self.index)


@dataclass(frozen=True)
class PatchRep:
    source_shape: Tuple[int, ...]
    spec: PatchSpec
    patches: Tuple[Patch, ...]

    @property
    def count(self) -> int:
        return len(self.patches)

    @cached_property
    def labels(self) -> np.ndarray:
        return label_map(self.source_shape, self.spec)

    def same_geometry(self, other: "PatchRep") -> bool:
        return self.source_shape == other.source_shape and self.spec == other.spec

    def with_patch(self, i: int, values: np.ndarray) -> "PatchRep":
        p = self.patches[i]
        values = np.asarray(values, dtype=float)
        if values.shape != p.values.shape:
            raise InconsistencyError(f"patch {i} has shape {p.values.shape}, got {values.shape}")
        patches = list(self.patches)
        patches[i] = Patch(p.index, values.copy())
        return PatchRep(self.source_shape, self.spec, tuple(patches))


def _check_dims(z_shape: Sequence[int], spec: PatchSpec) -> None:
    if len(spec.shape) != len(z_shape):
        raise ParameterError(f"patch {spec.shape} has {len(spec.shape)} dims, representation has {len(z_shape)}")
    for axis, (p, n) in enumerate(zip(spec.shape, z_shape)):
        if p > n:
            raise ParameterError(f"patch dim {p} exceeds representation dim {n} on axis {axis}")


def grid_shape(z_shape: Sequence[int], spec: PatchSpec) -> Tuple[int, ...]:
    return tuple(math.ceil(n / p) for n, p in zip(z_shape, spec.shape))


def patch_count(z_shape: Sequence[int], spec: PatchSpec) -> int:
    _check_dims(z_shape, spec)
    return int(np.prod(grid_shape(z_shape, spec), dtype=np.int64))


def patchify(z: np.ndarray, spec: PatchSpec) -> PatchRep:
    """Row-major tiling; trailing patches are truncated at the boundary."""
    z = np.asarray(z, dtype=float)
    spec = PatchSpec.parse(spec)
    _check_dims(z.shape, spec)
    ranges = [range(0, n, p) for n, p in zip(z.shape, spec.shape)]
    patches: List[Patch] = []
    for starts in itertools.product(*ranges):
        index = tuple(slice(s, min(s + p, n)) for s, p, n in zip(starts, spec.shape, z.shape))
        patches.append(Patch(index, z[index].copy()))
    return PatchRep(tuple(z.shape), spec, tuple(patches))


def unpatchify(p: PatchRep) -> np.ndarray:
    out = np.zeros(p.source_shape)
    hits = np.zeros(p.source_shape, dtype=np.int32)
    for i, patch in enumerate(p.patches):
        region = out[patch.index]
        if region.shape != patch.values.shape:
            raise InconsistencyError(f"patch {i} values {patch.values.shape} do not fit index {patch.bounds}")
        out[patch.index] = patch.values
        hits[patch.index] += 1
    if np.any(hits != 1):
        bad = "overlapping" if np.any(hits > 1) else "missing"
        raise InconsistencyError(f"patches do not tile the source exactly ({bad} elements)")
    return out


def label_map(z_shape: Sequence[int], spec: PatchSpec) -> np.ndarray:
    """Patch index of every element, in the same row-major order patchify uses."""
    _check_dims(z_shape, spec)
    grid = grid_shape(z_shape, spec)
    blocks = np.meshgrid(*[np.arange(n) // p for n, p in zip(z_shape, spec.shape)], indexing="ij")
    return np.ravel_multi_index(tuple(blocks), grid)


def dimension_report(z_shape: Sequence[int], spec: PatchSpec, remain_count: int) -> int:
    return patch_count(z_shape, PatchSpec.parse(spec)) + int(remain_count)


def patch_bounds(p: PatchRep, coords: Sequence[Tuple[str, np.ndarray]]) -> List[dict]:
    """Physical extent of each patch, e.g. [{'f_hz': (lo, hi)}, ...], from axis coordinates."""
    if len(coords) != len(p.source_shape):
        raise ParameterError("one coordinate axis per representation dim is required")
    out: List[dict] = []
    for patch in p.patches:
        ext = {}
        for (name, axis), sl in zip(coords, patch.index):
            ext[name] = (float(axis[sl.start]), float(axis[sl.stop - 1]))
        out.append(ext)
    return out
