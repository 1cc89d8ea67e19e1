"""Second variation of the end-point map and the Hessian of the penalised energy.

``Hess F_beta = Id + beta Hess E`` where ``E(u) = a(x_u(1))``. The default
Hessian-vector product differentiates the discrete reverse sweep in forward
mode, so it is the exact Hessian of the discretised energy (symmetric to
round-off). The ``"structural"`` mode assembles the same operator from its
pieces: the rank-n term ``D P^* (Hess a) D P`` plus the curvature operator
``N^nu = L^* M^nu + (M^nu)^* L + L^* S^nu L``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import NoConvergence
from .gradient import CostParams, _simpson_rep
from .system import ControlSystem, EndpointCost
from .trajectory import Control, _check, first_variation, integrate_adjoint, integrate_state, midpoint_states


def second_variation(sys: ControlSystem, x0, u: Control, v: Control, w: Control) -> np.ndarray:
    """``z_u^{v,w}(1)``, the second derivative of the end-point map along ``(v, w)``."""
    traj = integrate_state(sys, x0, u)
    yv = first_variation(sys, x0, u, v, traj)
    yw = first_variation(sys, x0, u, w, traj)
    with np.errstate(all="ignore"):
        Z = _kernels.second_variation_nodes(traj.nodes, u.values, v.values, w.values, yv, yw, sys.table)
    return _check(Z, "second variation")[-1].copy()


class HessianOperator:
    """Matrix-free ``v -> Hess_u F_beta [v]`` at a fixed base control.

    The trajectory and terminal data are computed once at construction; the
    instance is read-only afterwards.
    """

    def __init__(
        self,
        sys: ControlSystem,
        cost_fn: EndpointCost,
        params: CostParams,
        u: Control,
        mode: str = "discrete",
    ):
        if mode not in ("discrete", "structural"):
            raise ValueError(f"unknown Hessian mode {mode!r}")
        self.sys, self.cost_fn, self.params, self.u, self.mode = sys, cost_fn, params, u, mode
        self.traj = integrate_state(sys, params.x0, u)
        xN = self.traj.final
        self.nu = np.asarray(cost_fn.gradient(xN), dtype=np.float64)
        self.hess_a = np.asarray(cost_fn.hessian(xN), dtype=np.float64)
        if mode == "structural":
            self._costate = integrate_adjoint(sys, self.traj, u, self.nu).lam
            self._xmid = midpoint_states(sys, self.traj, u)

    @property
    def shape(self) -> tuple[int, int]:
        d = self.u.values.size
        return d, d

    def apply(self, v: Control) -> Control:
        if self.params.beta == 0.0:
            return Control(v.values)
        if self.mode == "discrete":
            return Control(v.values + self.params.beta * self._hess_e_discrete(v))
        return Control(v.values + self.params.beta * self._hess_e_structural(v))

    def matvec(self, flat: np.ndarray) -> np.ndarray:
        v = Control(flat.reshape(self.u.values.shape))
        return self.apply(v).values.ravel()

    def symmetric_residual(self, pairs: int = 20, seed: int = 0) -> float:
        """``max |<Hv, w> - <v, Hw>| / (|Hv| |w|)`` over random pairs."""
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(pairs):
            v = Control(rng.standard_normal(self.u.values.shape))
            w = Control(rng.standard_normal(self.u.values.shape))
            hv, hw = self.apply(v), self.apply(w)
            scale = max(hv.l2_norm() * w.l2_norm(), hw.l2_norm() * v.l2_norm(), 1e-300)
            worst = max(worst, abs(hv.inner(w) - v.inner(hw)) / scale)
        return worst

    # -- discrete: forward-over-reverse through the RK4 sweep ---------------
    def _hess_e_discrete(self, v: Control) -> np.ndarray:
        sys, u = self.sys, self.u
        Y = first_variation(sys, self.params.x0, u, v, self.traj)
        dlam = self.hess_a @ Y[-1]
        with np.errstate(all="ignore"):
            dG = _kernels.discrete_adjoint_tangent(
                self.traj.nodes, u.values, v.values, Y, self.nu, dlam, sys.table
            )
        return _check(dG * u.grid_size, "Hessian product")

    # -- structural: D P^* H_a D P + N^nu ------------------------------------
    def _hess_e_structural(self, v: Control) -> np.ndarray:
        sys, u, traj = self.sys, self.u, self.traj
        X, U, V = traj.nodes, u.values, v.values
        N, k = U.shape
        n = sys.state_dim
        h = 1.0 / N
        tab = sys.table
        lam = self._costate
        Y = first_variation(sys, self.params.x0, u, v, traj)

        # rank-n part: D P^* (Hess a) D P v
        c = self.hess_a @ Y[-1]
        rank_n = _simpson_rep(sys, traj, u, integrate_adjoint(sys, traj, u, c).lam)

        XS, LS = _kernels.stage_midpoints(X, U, lam, tab)
        bracket = np.empty((N, k))
        RL = np.empty((N, n))
        RM = np.empty((N, n))
        RR = np.empty((N, n))

        def pieces(x, l, y, c_u, c_v):
            jac = _kernels.jacobians(x, tab)
            hes = _kernels.hessians(x, tab)
            # (M^nu)^* L v integrand and the forcing row for L^* (M^nu + S^nu L) v
            b = np.array([l @ (jac[i] @ y) for i in range(k)])
            r = np.zeros(n)
            for i in range(k):
                r += c_v[i] * (l @ jac[i]) + c_u[i] * (l @ (hes[i] @ y))
            return b, r

        for j in range(N):
            ym = Y[j] + 0.5 * h * (
                _kernels._amat(X[j], U[j], tab) @ Y[j] + _kernels.fields(X[j], tab) @ V[j]
            )
            bl, RL[j] = pieces(X[j], lam[j], Y[j], U[j], V[j])
            bm, RM[j] = pieces(XS[j], LS[j], ym, U[j], V[j])
            br, RR[j] = pieces(X[j + 1], lam[j + 1], Y[j + 1], U[j], V[j])
            bracket[j] = (bl + 4.0 * bm + br) / 6.0

        mu = _kernels.forced_costate_nodes(X, self._xmid, U, RL, RM, RR, tab)
        MS = np.empty((N, n))
        for j in range(N):
            MS[j] = mu[j + 1] + 0.5 * h * (mu[j + 1] @ _kernels._amat(X[j + 1], U[j], tab) + RR[j])
        adjoint_part = _kernels.simpson_field_pairing(X, XS, mu, MS, tab)
        return _check(rank_n + bracket + adjoint_part, "Hessian product")


def hessian_apply(
    sys: ControlSystem,
    cost_fn: EndpointCost,
    params: CostParams,
    u: Control,
    v: Control,
    mode: str = "discrete",
) -> Control:
    """``Hess_u F_beta [v]``; see ``HessianOperator`` for the two modes."""
    return HessianOperator(sys, cost_fn, params, u, mode).apply(v)


@dataclass(frozen=True)
class SpectrumResult:
    """Extremal eigenvalues of ``H`` and of ``H - Id`` (both ordered by ``|H - Id|``)."""

    eigenvalues: np.ndarray
    shifted: np.ndarray
    residuals: np.ndarray
    iterations: int

    def near_zero_count(self, tol: float = 1e-6) -> int:
        """Number of probed eigenvalues of ``H`` with modulus at most ``tol``."""
        return int(np.sum(np.abs(self.eigenvalues) <= tol))


def spectrum_probe(
    op: HessianOperator,
    m: int,
    oversample: int | None = None,
    tol: float = 1e-8,
    max_iter: int = 500,
    seed: int = 0,
) -> SpectrumResult:
    """Largest-modulus eigenvalues of ``H - Id`` by block orthogonal iteration.

    ``H - Id = beta Hess E`` is compact, so its dominant eigenpairs carry all
    of the non-trivial spectrum of ``H``. Ritz pairs are extracted by
    Rayleigh-Ritz every sweep; the block is re-orthonormalised in full by QR.
    Converged when every wanted Ritz residual is below
    ``tol * max(1, |theta_max|)``.
    """
    dim = op.shape[0]
    if not 1 <= m <= dim:
        raise ValueError(f"m must lie in [1, {dim}], got {m}")
    p = min(dim, m + (oversample if oversample is not None else max(5, m)))
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((dim, p)))

    def shifted_apply(block):
        return np.column_stack([op.matvec(block[:, c]) - block[:, c] for c in range(block.shape[1])])

    for it in range(1, max_iter + 1):
        Z = shifted_apply(Q)
        T = Q.T @ Z
        theta, S = np.linalg.eigh(0.5 * (T + T.T))
        order = np.argsort(-np.abs(theta), kind="stable")
        theta, S = theta[order], S[:, order]
        Q = Q @ S
        Z = Z @ S
        res = np.linalg.norm(Z[:, :m] - Q[:, :m] * theta[:m], axis=0)
        scale = max(1.0, abs(theta[0]))
        if np.all(res <= tol * scale):
            return SpectrumResult(1.0 + theta[:m], theta[:m], res, it)
        Q, _ = np.linalg.qr(Z)
    raise NoConvergence(
        f"orthogonal iteration did not converge in {max_iter} sweeps "
        f"(max residual {np.max(res):.3e})"
    )
