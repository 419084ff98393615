"""Time meshes, piecewise polynomial functions and the two-point Gauss rule.

Macro meshes carry one uniform micro grid per interval (stored as the
integer number of micro steps ``M_n``, so ``k_n = 1/M_n`` exactly in the
sense of the grid).  Patch structure: intervals ``(1,2), (3,4), ...`` have
equal length; it is needed for the weight reconstructions.

Interval indices in the public API are 1-based like ``I_1 .. I_N``; arrays
are 0-based.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from typing import Callable, Iterable

import numpy as np

from .exceptions import StructuralError

__all__ = [
    "GAUSS_THETA",
    "MicroGrid",
    "MacroMesh",
    "PiecewiseLinearFn",
    "PiecewiseConstantFn",
    "PatchQuadraticFn",
    "PatchLinearFn",
    "gauss_points",
    "gauss2_integrate",
    "reconstruct_quadratic",
    "reconstruct_linear",
    "quadratic_weight_at_gauss",
    "linear_weight_at_gauss",
    "refine_interval",
    "refine",
    "write_mesh_csv",
    "read_mesh_csv",
]

# relative positions of the Gauss points mid -+ h/sqrt(12) inside [0, 1]
GAUSS_THETA = np.array([0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)])

_REL_TOL = 1e-12


def _micro_count(k: float) -> int:
    M = int(round(1.0 / k))
    if M <= 0 or abs(M * k - 1.0) > 1e-12:
        raise StructuralError(f"micro step {k!r} does not divide the unit period")
    return M


@dataclasses.dataclass(frozen=True)
class MicroGrid:
    """Uniform grid of the unit period with ``M`` (even) steps."""

    M: int

    def __post_init__(self):
        if int(self.M) != self.M or self.M <= 0:
            raise StructuralError(f"micro step count must be a positive integer, got {self.M}")
        if self.M % 2:
            raise StructuralError(f"micro step count must be even, got {self.M}")

    @classmethod
    def from_step(cls, k: float) -> "MicroGrid":
        return cls(_micro_count(k))

    @property
    def k(self) -> float:
        return 1.0 / self.M

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.M + 1) / self.M

    def refined(self) -> "MicroGrid":
        return MicroGrid(2 * self.M)


class MacroMesh:
    """Macro partition ``0 = T_0 < ... < T_N = T`` with per-interval micro grids."""

    def __init__(self, nodes, micro_counts, check_patches: bool = True):
        nodes = np.array(nodes, dtype=float)
        counts = np.array(micro_counts, dtype=np.int64).reshape(-1)
        if nodes.ndim != 1 or nodes.size < 2:
            raise StructuralError("need at least two mesh nodes")
        if np.any(np.diff(nodes) <= 0):
            raise StructuralError("mesh nodes must be strictly increasing")
        if counts.size != nodes.size - 1:
            raise StructuralError("one micro grid per macro interval required")
        if np.any(counts <= 0) or np.any(counts % 2):
            raise StructuralError("micro step counts must be positive even integers")
        nodes.setflags(write=False)
        counts.setflags(write=False)
        self.nodes = nodes
        self.micro_counts = counts
        if check_patches:
            self.check_patches()

    @classmethod
    def uniform(cls, T: float, K: float, k: float) -> "MacroMesh":
        N = int(round(T / K))
        if N <= 0 or abs(N * K - T) > _REL_TOL * T:
            raise StructuralError(f"K={K} does not divide T={T}")
        return cls(np.linspace(0.0, T, N + 1), np.full(N, _micro_count(k)))

    @property
    def N(self) -> int:
        return self.nodes.size - 1

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[:-1] + self.nodes[1:])

    @property
    def micro_steps(self) -> np.ndarray:
        return 1.0 / self.micro_counts

    def micro_grid(self, n: int) -> MicroGrid:
        """Micro grid of interval ``I_n`` (1-based)."""
        return MicroGrid(int(self.micro_counts[n - 1]))

    def has_patches(self) -> bool:
        if self.N % 2:
            return False
        K = self.steps
        return bool(np.all(np.abs(K[0::2] - K[1::2]) <= _REL_TOL * np.maximum(K[0::2], K[1::2])))

    def check_patches(self):
        if not self.has_patches():
            raise StructuralError("mesh has no patch structure (N even, K_{2n-1} = K_{2n})")

    def patch_partner(self, n: int) -> int:
        return n + 1 if n % 2 else n - 1

    def gauss_points(self) -> np.ndarray:
        return gauss_points(self.nodes)

    def effort(self) -> float:
        return float(np.sum(1.0 + self.micro_counts))

    def __eq__(self, other):
        if not isinstance(other, MacroMesh):
            return NotImplemented
        return np.array_equal(self.nodes, other.nodes) and np.array_equal(
            self.micro_counts, other.micro_counts
        )

    def __repr__(self):
        return f"MacroMesh(N={self.N}, T={self.T:g}, k in {sorted(set(self.micro_steps.tolist()))})"


def gauss_points(nodes) -> np.ndarray:
    """Gauss points ``chi_{n,q}``, shape ``(N, 2)``."""
    nodes = np.asarray(nodes, dtype=float)
    a, h = nodes[:-1], np.diff(nodes)
    return a[:, None] + h[:, None] * GAUSS_THETA[None, :]


def _nodes_of(mesh) -> np.ndarray:
    if isinstance(mesh, MacroMesh):
        return mesh.nodes
    if isinstance(mesh, MicroGrid):
        return mesh.nodes
    return np.asarray(mesh, dtype=float)


def gauss2_integrate(fn: Callable, mesh) -> np.ndarray:
    """Summed two-point Gauss rule of ``fn`` over a mesh (exact for cubics)."""
    nodes = _nodes_of(mesh)
    h = np.diff(nodes)
    chi = gauss_points(nodes)
    total = 0.0
    for n in range(h.size):
        total = total + 0.5 * h[n] * (np.asarray(fn(chi[n, 0])) + np.asarray(fn(chi[n, 1])))
    return np.asarray(total, dtype=float)


# ----------------------------------------------------------------------
# piecewise functions


class PiecewiseLinearFn:
    """Continuous piecewise linear function given by nodal values ``(N+1, c)``."""

    def __init__(self, nodes, values):
        self.nodes = np.asarray(nodes, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != self.nodes.size:
            raise StructuralError("one nodal value per mesh node required")
        self.values = values

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.stack([np.interp(t, self.nodes, v) for v in self.values.T], axis=-1)
        return out

    def at_gauss(self) -> np.ndarray:
        """Values at the Gauss points, shape ``(N, 2, c)``."""
        v = self.values
        th = GAUSS_THETA[None, :, None]
        return (1.0 - th) * v[:-1, None, :] + th * v[1:, None, :]

    def slopes(self) -> np.ndarray:
        return np.diff(self.values, axis=0) / np.diff(self.nodes)[:, None]


class PiecewiseConstantFn:
    """Piecewise constant function on ``I_n = (T_{n-1}, T_n]``, values ``(N, c)``."""

    def __init__(self, nodes, values):
        self.nodes = np.asarray(nodes, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != self.nodes.size - 1:
            raise StructuralError("one value per mesh interval required")
        self.values = values

    def interval_index(self, t) -> np.ndarray:
        idx = np.searchsorted(self.nodes, np.asarray(t, dtype=float), side="left") - 1
        return np.clip(idx, 0, self.values.shape[0] - 1)

    def __call__(self, t):
        return self.values[self.interval_index(t)]


def _patch_check(nodes):
    h = np.diff(nodes)
    if h.size % 2 or np.any(np.abs(h[0::2] - h[1::2]) > _REL_TOL * np.maximum(h[0::2], h[1::2])):
        raise StructuralError("reconstruction needs a mesh with patch structure")


class PatchQuadraticFn:
    """Patchwise quadratic interpolant of nodal values (one parabola per patch)."""

    def __init__(self, nodes, values):
        nodes = np.asarray(nodes, dtype=float)
        _patch_check(nodes)
        self.nodes = nodes
        self.values = np.asarray(values, dtype=float)

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        n_int = self.nodes.size - 1
        idx = np.clip(np.searchsorted(self.nodes, t, side="left") - 1, 0, n_int - 1)
        p = idx // 2
        return _lagrange3(self.nodes[2 * p], self.nodes[2 * p + 1], self.nodes[2 * p + 2],
                          self.values[2 * p], self.values[2 * p + 1], self.values[2 * p + 2], t)


class PatchLinearFn:
    """Patchwise linear function through the two interval midpoint values."""

    def __init__(self, nodes, values):
        nodes = np.asarray(nodes, dtype=float)
        _patch_check(nodes)
        self.nodes = nodes
        self.values = np.asarray(values, dtype=float)

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        n_int = self.nodes.size - 1
        idx = np.clip(np.searchsorted(self.nodes, t, side="left") - 1, 0, n_int - 1)
        p = idx // 2
        mid = 0.5 * (self.nodes[:-1] + self.nodes[1:])
        m1, m2 = mid[2 * p], mid[2 * p + 1]
        v1, v2 = self.values[2 * p], self.values[2 * p + 1]
        s = ((t - m1) / (m2 - m1)).reshape((-1,) + (1,) * (v1.ndim - 1))
        return v1 + s * (v2 - v1)


def _lagrange3(t0, t1, t2, v0, v1, v2, t):
    shape = (-1,) + (1,) * (np.ndim(v0) - 1)
    t0, t1, t2, t = (np.asarray(a).reshape(shape) for a in (t0, t1, t2, t))
    l0 = (t - t1) * (t - t2) / ((t0 - t1) * (t0 - t2))
    l1 = (t - t0) * (t - t2) / ((t1 - t0) * (t1 - t2))
    l2 = (t - t0) * (t - t1) / ((t2 - t0) * (t2 - t1))
    return l0 * v0 + l1 * v1 + l2 * v2


def reconstruct_quadratic(fn: PiecewiseLinearFn) -> PatchQuadraticFn:
    return PatchQuadraticFn(fn.nodes, fn.values)


def reconstruct_linear(fn: PiecewiseConstantFn) -> PatchLinearFn:
    return PatchLinearFn(fn.nodes, fn.values)


def quadratic_weight_at_gauss(nodes, values) -> np.ndarray:
    """``reconstruct_quadratic(v) - v`` at all Gauss points, shape ``(N, 2, ...)``.

    On a patch ``[a, a+2h]`` the parabola minus the piecewise linear
    interpolant is ``c * (t-a)(t-a-h)`` on the first and ``c * (t-a-h)(t-a-2h)``
    on the second interval with ``c`` the second divided difference; at the
    Gauss points both factors give ``-h^2/6``.
    """
    nodes = np.asarray(nodes, dtype=float)
    _patch_check(nodes)
    v = np.asarray(values, dtype=float)
    h = np.diff(nodes)
    v0, v1, v2 = v[0:-1:2], v[1::2], v[2::2]
    hp = h[0::2].reshape((-1,) + (1,) * (v.ndim - 1))
    curv = (v0 - 2.0 * v1 + v2) / (2.0 * hp * hp)
    bubble = -(hp * hp) / 6.0 * curv
    w = np.repeat(bubble, 2, axis=0)
    return np.repeat(w[:, None], 2, axis=1)


def linear_weight_at_gauss(nodes, values) -> np.ndarray:
    """``reconstruct_linear(v) - v`` at all Gauss points, shape ``(N, 2, ...)``.

    The patch line has slope ``s`` and passes through both midpoint values,
    so on either member the weight is ``s * (t - midpoint)``.
    """
    nodes = np.asarray(nodes, dtype=float)
    _patch_check(nodes)
    v = np.asarray(values, dtype=float)
    h = np.diff(nodes)
    expand = (-1,) + (1,) * (v.ndim - 1)
    slope = (v[1::2] - v[0::2]) / h[0::2].reshape(expand)
    off = (h / math.sqrt(12.0)).reshape(expand)
    s = np.repeat(slope, 2, axis=0)
    return np.stack([-s * off, s * off], axis=1)


# ----------------------------------------------------------------------
# refinement


def refine(mesh: MacroMesh, macro: Iterable[int] = (), micro: Iterable[int] = ()) -> MacroMesh:
    """Refine several intervals at once (1-based indices).

    Macro refinement splits ``I_n`` and its patch partner at their midpoints;
    both halves inherit the micro grid.  Micro refinement halves ``k_n``.
    """
    N = mesh.N
    macro = {int(n) for n in macro}
    micro = {int(n) for n in micro}
    for n in macro | micro:
        if not 1 <= n <= N:
            raise StructuralError(f"interval index {n} outside 1..{N}")
    split = set()
    for n in macro:
        split.add(n)
        split.add(mesh.patch_partner(n))
    counts = mesh.micro_counts.copy()
    for n in micro:
        counts[n - 1] *= 2
    nodes = [mesh.nodes[0]]
    new_counts = []
    for n in range(1, N + 1):
        a, b = mesh.nodes[n - 1], mesh.nodes[n]
        if n in split:
            nodes.append(0.5 * (a + b))
            new_counts.append(counts[n - 1])
        nodes.append(b)
        new_counts.append(counts[n - 1])
    return MacroMesh(nodes, new_counts)


def refine_interval(mesh: MacroMesh, n: int, mode: str) -> MacroMesh:
    if mode == "macro":
        return refine(mesh, macro=[n])
    if mode == "micro":
        return refine(mesh, micro=[n])
    raise ValueError(f"mode must be 'macro' or 'micro', got {mode!r}")


# ----------------------------------------------------------------------
# CSV


def write_mesh_csv(mesh: MacroMesh, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "T_start", "T_end", "k"])
        for n in range(1, mesh.N + 1):
            w.writerow([n, repr(float(mesh.nodes[n - 1])), repr(float(mesh.nodes[n])),
                        repr(float(mesh.micro_steps[n - 1]))])


def read_mesh_csv(path) -> MacroMesh:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    nodes = [float(rows[0]["T_start"])] + [float(r["T_end"]) for r in rows]
    return MacroMesh(nodes, [_micro_count(float(r["k"])) for r in rows])
