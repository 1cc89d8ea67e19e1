"""Grid controls and the state, fundamental-matrix, costate and first-variation paths.

Controls are piecewise constant on ``N`` uniform cells of [0, 1]; every path is
stored at the ``N + 1`` grid nodes only. All integrators are classic RK4 with the
control frozen inside each cell.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import _kernels
from .errors import MissingHint, NonFiniteState
from .system import ControlSystem


@dataclass(frozen=True, eq=False)
class Control:
    """Piecewise-constant control; ``values[j]`` holds on ``[j/N, (j+1)/N)``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1:
            raise ValueError(f"control values must be an (N, k) array, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("control values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, N: int, k: int) -> "Control":
        return cls(np.zeros((N, k)))

    @classmethod
    def constant(cls, value, N: int) -> "Control":
        value = np.atleast_1d(np.asarray(value, dtype=np.float64))
        return cls(np.tile(value, (N, 1)))

    @classmethod
    def from_function(cls, f: Callable[[np.ndarray], np.ndarray], N: int) -> "Control":
        """Cell averages of ``f`` by 3-point Gauss-Legendre quadrature.

        ``f`` maps an array of times ``s`` to an array of shape ``(len(s), k)``
        (or ``(len(s),)`` for scalar controls).
        """
        nodes, weights = np.polynomial.legendre.leggauss(3)
        left = np.arange(N) / N
        acc = 0.0
        for z, w in zip(nodes, weights):
            vals = np.asarray(f(left + (z + 1.0) / (2 * N)), dtype=np.float64)
            if vals.ndim == 1:
                vals = vals[:, None]
            acc = acc + 0.5 * w * vals
        return cls(acc)

    @property
    def grid_size(self) -> int:
        return self.values.shape[0]

    @property
    def control_dim(self) -> int:
        return self.values.shape[1]

    def inner(self, other: "Control") -> float:
        """``<self, other>_{L^2}``, exact for piecewise-constant functions."""
        return float(np.sum(self.values * _values(other))) / self.grid_size

    def l2_norm(self) -> float:
        return float(np.sqrt(self.inner(self)))

    def refine(self, factor: int) -> "Control":
        """The same function on a grid ``factor`` times finer."""
        return Control(np.repeat(self.values, factor, axis=0))

    def __add__(self, other):
        return Control(self.values + _values(other))

    def __sub__(self, other):
        return Control(self.values - _values(other))

    def __mul__(self, scalar):
        return Control(self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return Control(-self.values)


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, Control) else np.asarray(u, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """State at the grid nodes; ``nodes[j]`` approximates ``x_u(j/N)``."""

    nodes: np.ndarray

    @property
    def grid_size(self) -> int:
        return self.nodes.shape[0] - 1

    @property
    def final(self) -> np.ndarray:
        return self.nodes[-1]

    def to_csv(self, path) -> None:
        """Write ``s,x1..xn`` rows with 17 significant digits."""
        write_csv(path, "x", self.nodes)


@dataclass(frozen=True, eq=False)
class FundamentalMatrices:
    """``M[j]`` solves ``dM/ds = A_u M``; ``N_inv[j]`` its inverse path ``dN/ds = -N A_u``."""

    M: np.ndarray
    N_inv: np.ndarray

    def identity_defect(self) -> float:
        """``max_j |M[j] N_inv[j] - Id|_F``."""
        n = self.M.shape[1]
        prod = np.einsum("jab,jbc->jac", self.M, self.N_inv)
        return float(np.max(np.linalg.norm(prod - np.eye(n), axis=(1, 2))))


@dataclass(frozen=True, eq=False)
class AdjointPath:
    """Costate covectors at the nodes; ``lam[N]`` is the terminal value."""

    lam: np.ndarray


def _check(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteState(f"non-finite values while integrating the {what}")
    return arr


def _dims(sys: ControlSystem, u: Control) -> None:
    if u.control_dim != sys.control_dim:
        raise ValueError(
            f"control has {u.control_dim} components, system {sys.name!r} expects {sys.control_dim}"
        )


def integrate_state(sys: ControlSystem, x0, u: Control) -> Trajectory:
    """RK4 solution of ``dx/ds = F(x) u(s)``, ``x(0) = x0``."""
    _dims(sys, u)
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    if x0.shape != (sys.state_dim,):
        raise ValueError(f"x0 must have length {sys.state_dim}")
    with np.errstate(all="ignore"):
        X = _kernels.state_nodes(x0, u.values, sys.table)
    X[0] = x0
    return Trajectory(_check(X, "state"))


def midpoint_states(sys: ControlSystem, traj: Trajectory, u: Control) -> np.ndarray:
    """States at the cell midpoints, recomputed by a half-cell RK4 step."""
    with np.errstate(all="ignore"):
        return _check(_kernels.midpoints(traj.nodes, u.values, sys.table), "state")


def integrate_fundamental(sys: ControlSystem, traj: Trajectory, u: Control) -> FundamentalMatrices:
    """Fundamental matrix of the linearised system and its inverse path."""
    _dims(sys, u)
    with np.errstate(all="ignore"):
        M = _kernels.matrix_nodes(traj.nodes, u.values, sys.table, 1)
        Ninv = _kernels.matrix_nodes(traj.nodes, u.values, sys.table, -1)
    return FundamentalMatrices(_check(M, "fundamental matrix"), _check(Ninv, "inverse matrix"))


def integrate_adjoint(sys: ControlSystem, traj: Trajectory, u: Control, terminal) -> AdjointPath:
    """Backward RK4 for ``d(lam)/ds = -lam A_u`` with ``lam(1) = terminal``."""
    _dims(sys, u)
    terminal = np.asarray(terminal, dtype=np.float64).reshape(sys.state_dim)
    if not np.all(np.isfinite(terminal)):
        raise NonFiniteState("terminal covector is not finite")
    XM = midpoint_states(sys, traj, u)
    with np.errstate(all="ignore"):
        L = _kernels.costate_nodes(traj.nodes, XM, u.values, terminal, sys.table)
    L[-1] = terminal
    return AdjointPath(_check(L, "costate"))


def first_variation(sys: ControlSystem, x0, u: Control, v: Control, traj: Trajectory | None = None) -> np.ndarray:
    """Nodes of ``y`` solving ``dy/ds = F(x_u) v + A_u y``, ``y(0) = 0``.

    Integrated as RK4 on the pair ``(x, y)``, so ``y[N]`` is also the exact
    directional derivative of the discrete end-point map.
    """
    _dims(sys, u)
    if v.grid_size != u.grid_size or v.control_dim != u.control_dim:
        raise ValueError("u and v must live on the same grid")
    if traj is None:
        traj = integrate_state(sys, x0, u)
    with np.errstate(all="ignore"):
        Y = _kernels.tangent_nodes(traj.nodes, u.values, v.values, sys.table)
    return _check(Y, "first variation")


def c0_bound(sys: ControlSystem, x0, u: Control) -> float:
    """Gronwall bound ``(|x0| + sqrt(k) C |u|) exp(sqrt(k) C |u|)`` on ``max_s |x_u(s)|``."""
    if sys.growth is None:
        raise MissingHint(f"system {sys.name!r} has no sub-linear growth constant")
    r = np.sqrt(sys.control_dim) * sys.growth * u.l2_norm()
    return float((np.linalg.norm(x0) + r) * np.exp(r))


def write_csv(path, prefix: str, rows: np.ndarray, cells: bool = False) -> None:
    """Write ``s,<prefix>1..<prefix>m`` rows at 17 significant digits.

    Node tables (``N + 1`` rows) are stamped ``s = j/N``; with ``cells=True``
    the table has one row per control cell, stamped with the left cell edge.
    """
    rows = np.atleast_2d(rows)
    N = rows.shape[0] if cells else rows.shape[0] - 1
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s"] + [f"{prefix}{i + 1}" for i in range(rows.shape[1])])
        for j, row in enumerate(rows):
            w.writerow([f"{j / max(N, 1):.17g}"] + [f"{val:.17g}" for val in row])
