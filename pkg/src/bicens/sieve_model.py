"""Tensor I-spline sieve for a joint CDF and its marginals.

The coefficient vector ``theta`` has three blocks, flattened in this order:

* ``eta``   -- ``p x q`` tensor coefficients (row-major),
* ``omega`` -- ``p`` extra mass on the first-axis marginal,
* ``pi``    -- ``q`` extra mass on the second-axis marginal,

for a total dimension ``D = p*q + p + q``. With ``I_i = I_i(s)`` on axis 1 and
``J_j = I_j(t)`` on axis 2::

    F(s, t) = sum_ij eta_ij I_i J_j
    F1(s)   = sum_i (sum_j eta_ij + omega_i) I_i
    F2(t)   = sum_j (sum_i eta_ij + pi_j) J_j

Feasibility means every coordinate is nonnegative and the coordinates sum to
at most one. Each of the four quadrant probabilities of an observation is then
an affine function ``g . theta + c`` of the coefficients, which makes the
log-likelihood concave.
"""

from dataclasses import dataclass

import numpy as np

from bicens.errors import (
    ContractViolationError,
    InvalidArgumentError,
    NonFiniteLikelihoodError,
)
from bicens.spline_basis import KnotVector, ispline_basis

PROB_FLOOR = 1e-12
FEAS_TOL = 1e-12
DEFAULT_DOMAIN = (0.0, 5.0, 0.0, 5.0)


@dataclass(frozen=True)
class Observation:
    """One bivariate current-status record.

    ``d1`` is 1 iff the first event time is at most ``c1``; likewise ``d2``.
    """

    c1: float
    c2: float
    d1: int
    d2: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented collection of observations."""

    c1: np.ndarray
    c2: np.ndarray
    d1: np.ndarray
    d2: np.ndarray

    def __post_init__(self):
        cols = {}
        for name in ("c1", "c2"):
            cols[name] = np.array(getattr(self, name), dtype=float).reshape(-1)
        for name in ("d1", "d2"):
            raw = np.asarray(getattr(self, name)).reshape(-1)
            if raw.size and not np.all((raw == 0) | (raw == 1)):
                raise InvalidArgumentError(f"{name} must contain only 0/1")
            cols[name] = raw.astype(np.int8)
        n = cols["c1"].size
        if any(v.size != n for v in cols.values()):
            raise InvalidArgumentError("dataset columns must have equal length")
        for name, value in cols.items():
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @classmethod
    def from_observations(cls, observations):
        obs = list(observations)
        return cls(
            [o.c1 for o in obs], [o.c2 for o in obs], [o.d1 for o in obs], [o.d2 for o in obs]
        )

    def __len__(self):
        return self.c1.size

    def __getitem__(self, k):
        return Observation(
            float(self.c1[k]), float(self.c2[k]), int(self.d1[k]), int(self.d2[k])
        )

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    def outside(self, domain):
        """Indices of observations outside the rectangle ``(L1, U1, L2, U2)``."""
        L1, U1, L2, U2 = domain
        bad = (self.c1 < L1) | (self.c1 > U1) | (self.c2 < L2) | (self.c2 > U2)
        return np.nonzero(bad)[0]


@dataclass(frozen=True)
class SieveSpec:
    """Pair of I-spline families, one per axis, sharing a spline order."""

    basis1: KnotVector
    basis2: KnotVector

    def __post_init__(self):
        if self.basis1.order != self.basis2.order:
            raise InvalidArgumentError("both axes must use the same spline order")

    @property
    def p(self):
        return self.basis1.n_basis

    @property
    def q(self):
        return self.basis2.n_basis

    @property
    def dim(self):
        return self.p * self.q + self.p + self.q

    @property
    def domain(self):
        return (self.basis1.lower, self.basis1.upper, self.basis2.lower, self.basis2.upper)


@dataclass(frozen=True, eq=False)
class ThetaVector:
    """Sieve coefficients split into the ``eta``, ``omega`` and ``pi`` blocks."""

    eta: np.ndarray
    omega: np.ndarray
    pi: np.ndarray

    def __post_init__(self):
        eta = np.array(self.eta, dtype=float)
        if eta.ndim != 2:
            raise InvalidArgumentError("eta must be a p x q matrix")
        omega = np.array(self.omega, dtype=float).reshape(-1)
        pi = np.array(self.pi, dtype=float).reshape(-1)
        if omega.size != eta.shape[0] or pi.size != eta.shape[1]:
            raise InvalidArgumentError("omega/pi lengths must match eta's shape")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "pi", pi)

    @property
    def p(self):
        return self.eta.shape[0]

    @property
    def q(self):
        return self.eta.shape[1]

    def flat(self):
        return np.concatenate([self.eta.reshape(-1), self.omega, self.pi])

    @classmethod
    def from_flat(cls, spec_or_shape, x):
        if isinstance(spec_or_shape, SieveSpec):
            p, q = spec_or_shape.p, spec_or_shape.q
        else:
            p, q = spec_or_shape
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != p * q + p + q:
            raise InvalidArgumentError(f"expected {p * q + p + q} coefficients, got {x.size}")
        return cls(x[: p * q].reshape(p, q), x[p * q : p * q + p], x[p * q + p :])

    @classmethod
    def uniform(cls, spec, total=0.9):
        """Strictly interior point with every coordinate equal to ``total / D``."""
        return cls.from_flat(spec, np.full(spec.dim, total / spec.dim))


@dataclass(frozen=True)
class FeasibilityReport:
    """Outcome of :func:`check_feasible`; truthy iff feasible.

    ``violations`` lists flat coordinate indices that are negative, plus the
    index ``D`` when the coefficient sum exceeds one.
    """

    feasible: bool
    violations: tuple

    def __bool__(self):
        return self.feasible


def _flat(theta):
    if isinstance(theta, ThetaVector):
        return theta.flat()
    return np.asarray(theta, dtype=float).reshape(-1)


def check_feasible(theta, tol=FEAS_TOL):
    """Check nonnegativity of every coordinate and ``sum(theta) <= 1``."""
    x = _flat(theta)
    bad = [int(i) for i in np.nonzero(x < -tol)[0]]
    if x.sum() > 1.0 + tol:
        bad.append(x.size)
    return FeasibilityReport(not bad, tuple(bad))


@dataclass(frozen=True, eq=False)
class DesignRow:
    """Coefficient vectors of ``F``, ``F1`` and ``F2`` at one observation."""

    a_F: np.ndarray
    a_1: np.ndarray
    a_2: np.ndarray
    quadrant: tuple

    def realized(self):
        """Return ``(g, c)`` with realized probability ``g . theta + c``."""
        d1, d2 = self.quadrant
        if d1 and d2:
            return self.a_F, 0.0
        if d1:
            return self.a_1 - self.a_F, 0.0
        if d2:
            return self.a_2 - self.a_F, 0.0
        return self.a_F - self.a_1 - self.a_2, 1.0


def _affine_blocks(I1, I2):
    """Stacked ``a_F``, ``a_1``, ``a_2`` for rows of basis values ``I1``, ``I2``."""
    n, p = I1.shape
    q = I2.shape[1]
    aF = (I1[:, :, None] * I2[:, None, :]).reshape(n, p * q)
    zq, zp = np.zeros((n, q)), np.zeros((n, p))
    a1 = np.hstack([np.repeat(I1, q, axis=1), I1, zq])
    a2 = np.hstack([np.tile(I2, (1, p)), zp, I2])
    aF = np.hstack([aF, zp, zq])
    return aF, a1, a2


def _check_domain(spec, c1, c2):
    L1, U1, L2, U2 = spec.domain
    c1, c2 = np.asarray(c1, dtype=float), np.asarray(c2, dtype=float)
    bad = (c1 < L1) | (c1 > U1) | (c2 < L2) | (c2 > U2)
    if np.any(bad):
        k = int(np.nonzero(np.atleast_1d(bad))[0][0])
        raise InvalidArgumentError(f"point {k} lies outside the domain {spec.domain}")


def design_row(spec, obs):
    """Coefficient vectors of ``F``, ``F1``, ``F2`` at ``(obs.c1, obs.c2)``."""
    _check_domain(spec, obs.c1, obs.c2)
    I1 = ispline_basis(spec.basis1, [obs.c1])
    I2 = ispline_basis(spec.basis2, [obs.c2])
    aF, a1, a2 = _affine_blocks(I1, I2)
    return DesignRow(aF[0], a1[0], a2[0], (int(obs.d1), int(obs.d2)))


class QuadrantDesign:
    """Realized-quadrant probabilities ``G @ theta + const`` for a whole dataset.

    The basis products do not depend on ``theta``, so they are computed once
    and reused by every likelihood, gradient and Hessian evaluation.
    """

    def __init__(self, G, const):
        self.G = np.asarray(G, dtype=float)
        self.const = np.asarray(const, dtype=float)

    @classmethod
    def from_data(cls, spec, data):
        _check_domain(spec, data.c1, data.c2)
        I1 = ispline_basis(spec.basis1, data.c1)
        I2 = ispline_basis(spec.basis2, data.c2)
        aF, a1, a2 = _affine_blocks(I1, I2)
        d1 = data.d1.astype(bool)[:, None]
        d2 = data.d2.astype(bool)[:, None]
        G = np.where(
            d1 & d2,
            aF,
            np.where(d1, a1 - aF, np.where(d2, a2 - aF, aF - a1 - a2)),
        )
        const = np.where(data.d1 | data.d2, 0.0, 1.0)
        return cls(G, const)

    @property
    def n(self):
        return self.G.shape[0]

    def unattainable(self):
        """Observations whose probability is below the floor at every feasible point.

        An affine function attains its maximum over the feasible polytope at a
        vertex, and the vertices are the origin and the unit vectors.
        """
        best = self.const + np.maximum(self.G.max(axis=1), 0.0)
        return np.nonzero(best <= PROB_FLOOR)[0]

    def probabilities(self, theta):
        # Row-wise sums in a fixed order: identical observations get bitwise
        # identical probabilities, which a BLAS matvec does not guarantee.
        return np.sum(self.G * _flat(theta), axis=1) + self.const

    def _checked(self, theta):
        P = self.probabilities(theta)
        low = np.nonzero(~(P > PROB_FLOOR))[0]
        if low.size:
            k = int(low[0])
            raise NonFiniteLikelihoodError(k, P[k])
        return P

    def loglik(self, theta):
        return float(np.sum(np.log(self._checked(theta))))

    def grad(self, theta):
        return self.G.T @ (1.0 / self._checked(theta))

    def hess(self, theta):
        Gs = self.G / self._checked(theta)[:, None]
        return -(Gs.T @ Gs)

    def gain(self, theta, d):
        """Return ``t -> loglik(theta + t*d) - loglik(theta)`` evaluated accurately.

        The increment is summed as ``log1p(t * (G d)_k / P_k)``, so changes far
        below the resolution of the log-likelihood itself keep their sign.
        Steps that push a probability below the floor give ``-inf``.
        """
        P = self._checked(theta)
        ratio = (self.G @ np.asarray(d, dtype=float)) / P

        def increment(t):
            if np.any(P * (1.0 + t * ratio) <= PROB_FLOOR):
                return -np.inf
            return float(np.sum(np.log1p(t * ratio)))

        return increment

    def all_derivatives(self, theta):
        """Log-likelihood, gradient and Hessian from one probability evaluation."""
        P = self._checked(theta)
        Gs = self.G / P[:, None]
        return float(np.sum(np.log(P))), Gs.sum(axis=0), -(Gs.T @ Gs)


def _design(spec, data):
    if isinstance(data, QuadrantDesign):
        return data
    return QuadrantDesign.from_data(spec, data)


def _require_feasible(theta):
    report = check_feasible(theta)
    if not report:
        raise ContractViolationError(
            f"infeasible coefficients, violated constraints {report.violations[:10]}"
        )


def loglik(spec, theta, data):
    """Log-likelihood of ``data`` under the sieve distribution ``theta``.

    Raises
    ------
    NonFiniteLikelihoodError
        If any realized quadrant probability is at or below ``PROB_FLOOR``.
    """
    return _design(spec, data).loglik(theta)


def loglik_grad(spec, theta, data):
    """Analytic gradient ``sum_k g_k / P_k`` of :func:`loglik`."""
    return _design(spec, data).grad(theta)


def loglik_hess(spec, theta, data):
    """Analytic Hessian ``-sum_k g_k g_k^T / P_k^2``; negative semidefinite."""
    return _design(spec, data).hess(theta)


def cdf_eval(spec, theta, s, t):
    """Evaluate ``(F(s, t), F1(s), F2(t))``.

    ``s`` and ``t`` may be scalars or broadcast-compatible arrays. ``theta``
    must be feasible.
    """
    if not isinstance(theta, ThetaVector):
        theta = ThetaVector.from_flat(spec, theta)
    _require_feasible(theta)
    s_arr, t_arr = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
    _check_domain(spec, s_arr, t_arr)
    shape = s_arr.shape
    I1 = ispline_basis(spec.basis1, s_arr.reshape(-1))
    I2 = ispline_basis(spec.basis2, t_arr.reshape(-1))
    F = np.einsum("ni,ij,nj->n", I1, theta.eta, I2)
    F1 = I1 @ (theta.eta.sum(axis=1) + theta.omega)
    F2 = I2 @ (theta.eta.sum(axis=0) + theta.pi)
    if shape == ():
        return float(F[0]), float(F1[0]), float(F2[0])
    return F.reshape(shape), F1.reshape(shape), F2.reshape(shape)


def marginal_eval(spec, theta, s=None, t=None):
    """Evaluate only ``F1`` at ``s`` or only ``F2`` at ``t`` (one of them)."""
    if not isinstance(theta, ThetaVector):
        theta = ThetaVector.from_flat(spec, theta)
    if (s is None) == (t is None):
        raise InvalidArgumentError("pass exactly one of s, t")
    if s is not None:
        return ispline_basis(spec.basis1, s) @ (theta.eta.sum(axis=1) + theta.omega)
    return ispline_basis(spec.basis2, t) @ (theta.eta.sum(axis=0) + theta.pi)


def cdf_grid(spec, theta, s_axis, t_axis):
    """Evaluate ``F`` on the tensor grid ``s_axis x t_axis`` plus both marginals.

    Returns ``(F, F1, F2)`` with ``F`` of shape ``(len(s_axis), len(t_axis))``.
    """
    if not isinstance(theta, ThetaVector):
        theta = ThetaVector.from_flat(spec, theta)
    I1 = ispline_basis(spec.basis1, s_axis)
    I2 = ispline_basis(spec.basis2, t_axis)
    F = I1 @ theta.eta @ I2.T
    F1 = I1 @ (theta.eta.sum(axis=1) + theta.omega)
    F2 = I2 @ (theta.eta.sum(axis=0) + theta.pi)
    return F, F1, F2


SHAPE_CHECKS = (
    "F >= 0",
    "F nondecreasing in s",
    "F nondecreasing in t",
    "rectangle mass >= 0",
    "F1 - F >= 0",
    "F2 - F >= 0",
    "F1 increment >= F increment in s",
    "F2 increment >= F increment in t",
    "1 - F1 - F2 + F >= 0",
)


def _pair_diffs(a, axis):
    """``a[j] - a[i]`` over all index pairs ``i < j`` along ``axis``."""
    a = np.moveaxis(np.asarray(a, dtype=float), axis, 0)
    i, j = np.triu_indices(a.shape[0], k=1)
    return np.moveaxis(a[j] - a[i], 0, axis)


def shape_violations(F, F1, F2):
    """Largest violation of each CDF shape inequality on a tensor grid.

    ``F`` has shape ``(len(s), len(t))`` and ``F1``, ``F2`` are the marginals
    on the same axes (both increasing). Every pair ``s' < s''``, ``t' < t''``
    of grid points is checked. Returns a dict mapping each entry of
    :data:`SHAPE_CHECKS` to ``max(0, -min(lhs))``.
    """
    F = np.asarray(F, dtype=float)
    F1 = np.asarray(F1, dtype=float)
    F2 = np.asarray(F2, dtype=float)
    dFs = _pair_diffs(F, 0)
    dFt = _pair_diffs(F, 1)
    lhs = (
        F,
        dFs,
        dFt,
        _pair_diffs(dFs, 1),
        F1[:, None] - F,
        F2[None, :] - F,
        _pair_diffs(F1, 0)[:, None] - dFs,
        _pair_diffs(F2, 0)[None, :] - dFt,
        1.0 - F1[:, None] - F2[None, :] + F,
    )
    return {
        name: max(0.0, -float(v.min())) if v.size else 0.0
        for name, v in zip(SHAPE_CHECKS, lhs)
    }
