"""Feedforward plants: cascades dx_i = x_{i+1} + g_i(x_{i+2..n}), dx_n = u.

Each stage nonlinearity g_i is a polynomial in the downstream states with
every monomial of total degree >= 2, so g_i(0) = 0 and Dg_i(0) = 0 hold
structurally.  A curvature constant ``quad_bound`` must dominate
|g_i(w)| <= quad_bound * |w|^2 on the unit infinity-ball; this is checked
by grid sampling.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericDomainError

# terms of one stage nonlinearity: ((exponents over downstream states), coeff)
PolyTerm = tuple[tuple[int, ...], float]


def _eval_poly(terms: tuple[PolyTerm, ...], w: np.ndarray) -> float:
    acc = 0.0
    for exps, coeff in terms:
        m = coeff
        for e, wi in zip(exps, w):
            m *= wi**e
        acc += m
    return acc


def _poly_grad(terms: tuple[PolyTerm, ...], w: np.ndarray) -> np.ndarray:
    grad = np.zeros(len(w))
    for exps, coeff in terms:
        for j, ej in enumerate(exps):
            if ej == 0:
                continue
            m = coeff * ej
            for i, (e, wi) in enumerate(zip(exps, w)):
                m *= wi ** (e - 1 if i == j else e)
            grad[j] += m
    return grad


@dataclass(frozen=True)
class FeedforwardPlant:
    """Cascade plant with polynomial stage nonlinearities.

    n:          state dimension
    stages:     n-1 polynomials; stages[i] depends on x[i+2..n] (0-based:
                variables x[i+1:]), each monomial of total degree >= 2
    quad_bound: curvature constant dominating every stage on the unit ball
    init_box:   componentwise bound on the initial state
    """

    n: int
    stages: tuple[tuple[PolyTerm, ...], ...]
    quad_bound: float
    init_box: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("state dimension must be >= 1")
        if len(self.stages) != self.n - 1:
            raise ConfigError(
                f"expected {self.n - 1} stage nonlinearities, got {len(self.stages)}"
            )
        if not (self.quad_bound > 0):
            raise ConfigError("quad_bound must be positive")
        norm_stages = []
        for i, terms in enumerate(self.stages):
            nvars = self.n - 1 - i
            norm_terms = []
            for exps, coeff in terms:
                exps = tuple(int(e) for e in exps)
                if len(exps) != nvars:
                    raise ConfigError(
                        f"stage {i + 1} term {exps}: expected {nvars} exponent entries"
                    )
                if any(e < 0 for e in exps):
                    raise ConfigError(f"stage {i + 1} term {exps}: negative exponent")
                if sum(exps) < 2:
                    raise ConfigError(
                        f"stage {i + 1} term {exps}: monomial degree must be >= 2"
                    )
                norm_terms.append((exps, float(coeff)))
            norm_stages.append(tuple(norm_terms))
        object.__setattr__(self, "stages", tuple(norm_stages))
        box = np.asarray(
            self.init_box if self.init_box is not None else np.ones(self.n), dtype=float
        )
        if box.shape != (self.n,) or not np.all(box > 0):
            raise ConfigError("init_box must be an n-vector of positive entries")
        object.__setattr__(self, "init_box", box)

    # -- dynamics ---------------------------------------------------------

    def vector_field(self, x: np.ndarray, u: float) -> np.ndarray:
        """Right-hand side of the cascade at state x with input u."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise NumericDomainError(f"state must have shape ({self.n},)")
        if not (np.all(np.isfinite(x)) and np.isfinite(u)):
            raise NumericDomainError("non-finite state or input")
        dx = np.empty(self.n)
        for i in range(self.n - 1):
            dx[i] = x[i + 1] + _eval_poly(self.stages[i], x[i + 1 :])
        dx[self.n - 1] = u
        return dx

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """d(vector_field)/dx at fixed input."""
        x = np.asarray(x, dtype=float)
        J = np.zeros((self.n, self.n))
        for i in range(self.n - 1):
            J[i, i + 1] = 1.0
            J[i, i + 1 :] += _poly_grad(self.stages[i], x[i + 1 :])
        return J

    def is_chain(self) -> bool:
        """True when every stage nonlinearity is identically zero."""
        return all(len(t) == 0 for t in self.stages)

    # -- validation -------------------------------------------------------

    def validate_quadratic_bound(self, grid_density: int = 21):
        """Sample |g_i| <= quad_bound * |w|^2 on the unit infinity-ball.

        Returns (ok, worst_ratio) with worst_ratio = max |g_i(w)| / |w|^2
        over the sampled grid (w != 0).
        """
        if grid_density < 3:
            raise ConfigError("grid_density must be >= 3")
        worst = 0.0
        axis = np.linspace(-1.0, 1.0, grid_density)
        for i, terms in enumerate(self.stages):
            if not terms:
                continue
            nvars = self.n - 1 - i
            for w in itertools.product(axis, repeat=nvars):
                w = np.array(w)
                sq = float(w @ w)
                if sq == 0.0:
                    continue
                ratio = abs(_eval_poly(terms, w)) / sq
                if ratio > worst:
                    worst = ratio
        return worst <= self.quad_bound * (1 + 1e-12), worst

    def check_initial_condition(self, x0: np.ndarray) -> bool:
        """True iff |x0_i| <= init_box_i componentwise (boundary included)."""
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (self.n,):
            raise NumericDomainError(f"state must have shape ({self.n},)")
        return bool(np.all(np.abs(x0) <= self.init_box))

    # -- packing for the compiled flow kernels ----------------------------

    def packed_terms(self):
        """Flatten stage polynomials to (coeffs, exps, rows) arrays.

        exps is padded to full state width: column m holds the exponent of
        x[m+1... ] aligned so the kernel evaluates prod x[m]**exps[t, m].
        """
        coeffs, exps, rows = [], [], []
        for i, terms in enumerate(self.stages):
            for e, c in terms:
                coeffs.append(c)
                full = np.zeros(self.n, dtype=np.int64)
                full[i + 1 :] = e
                exps.append(full)
                rows.append(i)
        if not coeffs:
            return (
                np.zeros(0),
                np.zeros((0, self.n), dtype=np.int64),
                np.zeros(0, dtype=np.int64),
            )
        return (
            np.asarray(coeffs, dtype=float),
            np.vstack(exps),
            np.asarray(rows, dtype=np.int64),
        )


def integrator_chain(n: int, init_box=None, quad_bound: float = 1.0) -> FeedforwardPlant:
    """Pure chain of integrators (all stage nonlinearities zero)."""
    return FeedforwardPlant(
        n=n,
        stages=tuple(() for _ in range(n - 1)),
        quad_bound=quad_bound,
        init_box=init_box,
    )
