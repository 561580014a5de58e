"""Scalar fields on a uniform cell-centered grid over a truncated box.

All estimates downstream are stated in the discrete L1 / Lr / Linf / TV
norms defined here, with cell-measure quadrature: a field value is the
sample at the cell center and carries measure h^dim.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np


class Boundary(Enum):
    DIRICHLET_ZERO = "dirichlet"
    PERIODIC = "periodic"


class FieldError(ValueError):
    """Invalid grid field input (non-finite entries, shape/spec mismatch)."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on the box [-L, L]^dim with N cells per axis.

    Cell i is centered at -L + (i + 1/2) h, h = 2L/N.  DirichletZero is
    realized through ghost cells pinned at zero (compactly supported data
    on the whole space); Periodic wraps around.
    """

    dim: int
    half_width: float
    points_per_axis: int
    boundary: Boundary = Boundary.DIRICHLET_ZERO

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise FieldError(f"dim must be 1 or 2, got {self.dim}")
        if self.points_per_axis < 3:
            raise FieldError(f"points_per_axis must be >= 3, got {self.points_per_axis}")
        if not (self.half_width > 0):
            raise FieldError(f"half_width must be positive, got {self.half_width}")

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / self.points_per_axis

    @property
    def cell_measure(self) -> float:
        return self.h**self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.dim

    @property
    def n_cells(self) -> int:
        return self.points_per_axis**self.dim

    def axis_centers(self) -> np.ndarray:
        n, h = self.points_per_axis, self.h
        return -self.half_width + (np.arange(n) + 0.5) * h

    def meshgrid(self) -> tuple[np.ndarray, ...]:
        x = self.axis_centers()
        if self.dim == 1:
            return (x,)
        return tuple(np.meshgrid(x, x, indexing="ij"))


@dataclass(frozen=True)
class GridField:
    """Immutable real-valued field sampled at cell centers."""

    spec: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.spec.shape:
            if vals.size == self.spec.n_cells:
                vals = vals.reshape(self.spec.shape)
            else:
                raise FieldError(
                    f"values shape {vals.shape} incompatible with grid {self.spec.shape}"
                )
        if not np.all(np.isfinite(vals)):
            raise FieldError("field contains non-finite entries")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def with_values(self, values: np.ndarray) -> "GridField":
        return GridField(self.spec, values)


@dataclass(frozen=True)
class NormReport:
    l1: float
    linf: float
    tv: float
    pos_linf: float
    neg_linf: float


def zero_field(spec: GridSpec) -> GridField:
    return GridField(spec, np.zeros(spec.shape))


def constant_field(spec: GridSpec, c: float) -> GridField:
    return GridField(spec, np.full(spec.shape, float(c)))


def bump_field(spec: GridSpec, amplitude: float = 1.0, width: float = 0.5,
               center: float = 0.0) -> GridField:
    """Smooth compactly supported bump a*cos^2(pi r / (2 w)) on |x - c| < w.

    Nonnegative, bounded variation, support strictly inside the box when
    width + |center| < half_width.
    """
    if spec.dim == 1:
        (x,) = spec.meshgrid()
        r = np.abs(x - center)
    else:
        xx, yy = spec.meshgrid()
        r = np.sqrt((xx - center) ** 2 + (yy - center) ** 2)
    vals = np.where(r < width, amplitude * np.cos(np.pi * r / (2.0 * width)) ** 2, 0.0)
    return GridField(spec, vals)


def step_field(spec: GridSpec, left: float = 0.0, right: float = 1.0) -> GridField:
    """1-D step: `left` on x < 0, `right` on x >= 0."""
    if spec.dim != 1:
        raise FieldError("step_field is 1-D only")
    (x,) = spec.meshgrid()
    return GridField(spec, np.where(x < 0.0, left, right))


def l1_norm(f: GridField) -> float:
    return float(np.sum(np.abs(f.values)) * f.spec.cell_measure)


def lr_norm(f: GridField, r: float) -> float:
    """Discrete Lr norm, r in [1, inf]."""
    if r == np.inf:
        return float(np.max(np.abs(f.values))) if f.values.size else 0.0
    return float((np.sum(np.abs(f.values) ** r) * f.spec.cell_measure) ** (1.0 / r))


def pos_neg_linf(f: GridField) -> tuple[float, float]:
    """(sup of positive part, sup of negative part), both >= 0."""
    v = f.values
    return (max(float(np.max(v)), 0.0), max(float(-np.min(v)), 0.0))


def linf_norm(f: GridField) -> float:
    p, n = pos_neg_linf(f)
    return max(p, n)


def _axis_forward_diffs(vals: np.ndarray, spec: GridSpec, axis: int) -> np.ndarray:
    if spec.boundary is Boundary.PERIODIC:
        return np.roll(vals, -1, axis=axis) - vals
    # Dirichlet: jumps into the zero ghost layer on both ends are part of
    # the variation of the zero-extended function.
    pad = [(0, 0)] * vals.ndim
    pad[axis] = (1, 1)
    padded = np.pad(vals, pad, mode="constant", constant_values=0.0)
    return np.diff(padded, axis=axis)


def tv_norm(f: GridField) -> float:
    """Anisotropic discrete total variation: sum over axes of one-sided
    differences weighted by h^(dim-1)."""
    spec = f.spec
    total = 0.0
    for axis in range(spec.dim):
        total += float(np.sum(np.abs(_axis_forward_diffs(f.values, spec, axis))))
    return total * spec.h ** (spec.dim - 1)


def l1_distance(f: GridField, g: GridField) -> float:
    if f.spec != g.spec:
        raise FieldError("l1_distance requires identical grid specs")
    return float(np.sum(np.abs(f.values - g.values)) * f.spec.cell_measure)


def lr_distance(f: GridField, g: GridField, r: float) -> float:
    if f.spec != g.spec:
        raise FieldError("lr_distance requires identical grid specs")
    return lr_norm(GridField(f.spec, f.values - g.values), r)


def norm_report(f: GridField) -> NormReport:
    p, n = pos_neg_linf(f)
    return NormReport(l1=l1_norm(f), linf=max(p, n), tv=tv_norm(f), pos_linf=p, neg_linf=n)


def boundary_mass_fraction(f: GridField) -> float:
    """Share of the L1 mass sitting in the outermost cell layer.

    The model problem lives on the whole space; runs where this exceeds
    ~1e-8 are flagged because box truncation is then visibly active.
    """
    total = float(np.sum(np.abs(f.values)))
    if total == 0.0:
        return 0.0
    v = f.values
    if f.spec.dim == 1:
        edge = abs(v[0]) + abs(v[-1])
    else:
        edge = (np.sum(np.abs(v[0, :])) + np.sum(np.abs(v[-1, :]))
                + np.sum(np.abs(v[1:-1, 0])) + np.sum(np.abs(v[1:-1, -1])))
    return float(edge) / total


def laplacian(f_values: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Standard (2*dim+1)-point Laplacian with the grid's boundary rule."""
    v = f_values
    h2 = spec.h**2
    out = -2.0 * spec.dim * v
    for axis in range(spec.dim):
        if spec.boundary is Boundary.PERIODIC:
            out = out + np.roll(v, 1, axis=axis) + np.roll(v, -1, axis=axis)
        else:
            up = np.zeros_like(v)
            dn = np.zeros_like(v)
            src = [slice(None)] * v.ndim
            dst = [slice(None)] * v.ndim
            src[axis], dst[axis] = slice(1, None), slice(0, -1)
            up[tuple(dst)] = v[tuple(src)]
            src[axis], dst[axis] = slice(0, -1), slice(1, None)
            dn[tuple(dst)] = v[tuple(src)]
            out = out + up + dn
    return out / h2


def write_csv(f: GridField, path: str | Path) -> None:
    """One row per cell, axis indices then the value; round-trips exactly."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        if f.spec.dim == 1:
            w.writerow(["i", "value"])
            for i, val in enumerate(f.values):
                w.writerow([i, repr(float(val))])
        else:
            w.writerow(["i", "j", "value"])
            for i in range(f.spec.points_per_axis):
                for j in range(f.spec.points_per_axis):
                    w.writerow([i, j, repr(float(f.values[i, j]))])


def read_csv(spec: GridSpec, path: str | Path) -> GridField:
    vals = np.zeros(spec.shape)
    with Path(path).open(newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if len(header) != spec.dim + 1:
            raise FieldError(f"CSV header {header} does not match dim {spec.dim}")
        for row in rd:
            idx = tuple(int(c) for c in row[:-1])
            vals[idx] = float(row[-1])
    return GridField(spec, vals)
