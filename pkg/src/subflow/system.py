"""Control systems with polynomial vector fields and end-point costs.

A system is ``dx/ds = F(x) u`` with ``F : R^n -> R^{n x k}``; the columns of
``F`` are the controlled fields ``F^0 .. F^{k-1}`` (0-based here). Fields are
stored as monomial tables, so every derivative is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels
from .errors import MalformedPolynomial, UnknownSystem

# (component l, field i, coefficient, exponents)
Term = tuple[int, int, float, Sequence[int]]


@dataclass(frozen=True, eq=False)
class ControlSystem:
    """Immutable polynomial control system ``dx/ds = F(x) u``.

    Parameters
    ----------
    name : str
    state_dim, control_dim : int
        ``n`` and ``k``.
    terms : sequence of (component, field, coef, powers)
        Monomial table; ``F[component, field] += coef * prod(x ** powers)``.
    lipschitz : float, optional
        Global Lipschitz constant ``L`` of the fields, when known.
    growth : float, optional
        Sub-linear growth constant ``C`` with ``|F^i(x)| <= C (|x| + 1)``.
    """

    name: str
    state_dim: int
    control_dim: int
    terms: tuple = ()
    lipschitz: Optional[float] = None
    growth: Optional[float] = None
    table: tuple = field(init=False, repr=False)

    def __post_init__(self):
        n, k = self.state_dim, self.control_dim
        if n < 1 or k < 1:
            raise MalformedPolynomial(f"dimensions must be positive, got n={n}, k={k}")
        comp, fld, coef, powers = [], [], [], []
        for t in self.terms:
            c, i, a, pw = t
            pw = tuple(int(e) for e in pw)
            if not (0 <= c < n and 0 <= i < k):
                raise MalformedPolynomial(f"term {t!r} indexes outside n={n}, k={k}")
            if len(pw) != n or any(e < 0 for e in pw):
                raise MalformedPolynomial(f"term {t!r} needs {n} non-negative exponents")
            if not np.isfinite(a):
                raise MalformedPolynomial(f"term {t!r} has a non-finite coefficient")
            comp.append(c)
            fld.append(i)
            coef.append(float(a))
            powers.append(pw)
        tab = (
            np.array(coef, dtype=np.float64),
            np.array(powers, dtype=np.int64).reshape(len(coef), n),
            np.array(comp, dtype=np.int64),
            np.array(fld, dtype=np.int64),
            n,
            k,
        )
        object.__setattr__(self, "table", tab)

    def fields_eval(self, x) -> np.ndarray:
        """``F(x)`` as an ``(n, k)`` array whose columns are the fields."""
        return _kernels.fields(self._point(x), self.table)

    def jacobian_eval(self, x, i: int) -> np.ndarray:
        """``dF^i/dx`` at ``x``, shape ``(n, n)``."""
        return _kernels.jacobians(self._point(x), self.table)[i]

    def hessian_eval(self, x, i: int) -> np.ndarray:
        """``d^2 F^i / dx^2`` at ``x``; ``out[l, m, p] = d^2 F^i_l / dx_m dx_p``."""
        return _kernels.hessians(self._point(x), self.table)[i]

    def lie_bracket(self, x, i: int, j: int) -> np.ndarray:
        """``[F^i, F^j](x) = dF^j F^i - dF^i F^j``."""
        x = self._point(x)
        f = self.fields_eval(x)
        jac = _kernels.jacobians(x, self.table)
        return jac[j] @ f[:, i] - jac[i] @ f[:, j]

    def _point(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        if x.shape != (self.state_dim,):
            raise ValueError(f"expected a point of shape ({self.state_dim},), got {x.shape}")
        return x


@dataclass(frozen=True, eq=False)
class EndpointCost:
    """Non-negative end-point cost ``a`` with gradient (row covector) and Hessian."""

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    zero_set_hint: Optional[np.ndarray] = None


def make_heisenberg() -> ControlSystem:
    """First Heisenberg group: ``F^0 = (1, 0, -y/2)``, ``F^1 = (0, 1, x/2)``."""
    terms = [
        (0, 0, 1.0, (0, 0, 0)),
        (2, 0, -0.5, (0, 1, 0)),
        (1, 1, 1.0, (0, 0, 0)),
        (2, 1, 0.5, (1, 0, 0)),
    ]
    return ControlSystem("heisenberg", 3, 2, tuple(terms), lipschitz=0.5, growth=1.0)


def make_grushin() -> ControlSystem:
    """Grushin plane: ``F^0 = (1, 0)``, ``F^1 = (0, x)``."""
    terms = [(0, 0, 1.0, (0, 0)), (1, 1, 1.0, (1, 0))]
    return ControlSystem("grushin", 2, 2, tuple(terms), lipschitz=1.0, growth=1.0)


def make_linear(B) -> ControlSystem:
    """Constant fields ``F(x) = B``."""
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if not np.all(np.isfinite(B)):
        raise MalformedPolynomial("B must have finite entries")
    n, k = B.shape
    zero = (0,) * n
    terms = [(l, i, B[l, i], zero) for l in range(n) for i in range(k) if B[l, i] != 0.0]
    growth = float(np.max(np.linalg.norm(B, axis=0))) if B.size else 0.0
    return ControlSystem("linear", n, k, tuple(terms), lipschitz=0.0, growth=growth)


def make_quadratic_cost(x1) -> EndpointCost:
    """``a(x) = |x - x1|^2 / 2``; its zero set is the single point ``x1``."""
    x1 = np.atleast_1d(np.asarray(x1, dtype=np.float64)).copy()
    x1.setflags(write=False)
    eye = np.eye(x1.size)

    def value(x):
        d = np.atleast_1d(x) - x1
        return 0.5 * float(d @ d)

    def gradient(x):
        return np.atleast_1d(np.asarray(x, dtype=np.float64)) - x1

    def hessian(x):
        return eye.copy()

    return EndpointCost(value, gradient, hessian, zero_set_hint=x1)


_BUILTINS = {"heisenberg": make_heisenberg, "grushin": make_grushin}


def load_system(config: dict) -> ControlSystem:
    """Build a system from its JSON description.

    Accepted forms::

        {"builtin": "heisenberg"}            # or "grushin"
        {"builtin": "linear", "B": [[...]]}
        {"n": 3, "k": 2, "fields": [F0, F1, ...]}

    where each ``Fi`` lists ``n`` components and each component is a list of
    monomials ``{"coef": c, "powers": [e_1, ..., e_n]}``. Optional keys
    ``lipschitz`` and ``growth`` set the bound hints.
    """
    if not isinstance(config, dict):
        raise MalformedPolynomial("system description must be a JSON object")
    if "builtin" in config:
        name = config["builtin"]
        if name == "linear":
            if "B" not in config:
                raise MalformedPolynomial("builtin 'linear' requires a matrix 'B'")
            return make_linear(config["B"])
        try:
            return _BUILTINS[name]()
        except (KeyError, TypeError):
            raise UnknownSystem(f"unknown builtin system {name!r}") from None

    try:
        n = int(config["n"])
        k = int(config["k"])
        fields = config["fields"]
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedPolynomial(f"polynomial system needs integer n, k and 'fields': {exc}") from None
    if not isinstance(fields, list) or len(fields) != k:
        raise MalformedPolynomial(f"'fields' must list {k} vector fields")
    terms = []
    for i, comps in enumerate(fields):
        if not isinstance(comps, list) or len(comps) != n:
            raise MalformedPolynomial(f"field {i} must list {n} components")
        for l, monos in enumerate(comps):
            if not isinstance(monos, list):
                raise MalformedPolynomial(f"field {i}, component {l}: expected a list of monomials")
            for mono in monos:
                try:
                    coef = float(mono["coef"])
                    powers = [int(e) for e in mono["powers"]]
                except (KeyError, TypeError, ValueError):
                    raise MalformedPolynomial(
                        f"field {i}, component {l}: bad monomial {mono!r}"
                    ) from None
                terms.append((l, i, coef, powers))
    return ControlSystem(
        config.get("name", "polynomial"),
        n,
        k,
        tuple(terms),
        lipschitz=config.get("lipschitz"),
        growth=config.get("growth"),
    )
