"""Generalized gradient projection with an active constraint set.

Maximizes a concave log-likelihood over the polytope ``{theta >= 0, sum(theta) <= 1}``.
Constraints are numbered ``0 .. D-1`` for ``theta_i >= 0`` (row ``-e_i``) and
``D`` for ``sum(theta) <= 1`` (row of ones).

Each iteration:

1. computes the search direction ``d = P W^{-1} grad`` with ``W = -H + delta*I``
   and ``P`` the ``W``-orthogonal projection onto the null space of the
   active rows,
2. finds the largest step ``gamma`` keeping ``theta + gamma*d`` feasible,
3. halves ``gamma`` until the likelihood does not decrease and moves by
   ``min(gamma_k, 0.5)``,
4. adds any newly binding constraints, and
5. once ``||d|| < eps`` and the Newton decrement ``grad . d < eps`` checks
   the Lagrange multipliers, releasing the most negative one or stopping when
   all are nonnegative.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from bicens.errors import (
    BicensError,
    InfeasibleDataError,
    InvalidArgumentError,
    NonFiniteLikelihoodError,
    StallError,
)
from bicens.sieve_model import QuadrantDesign, ThetaVector, check_feasible

log = logging.getLogger(__name__)

MAX_HALVINGS = 60
STEP_CAP = 0.5


@dataclass(frozen=True)
class ActiveSet:
    """Ordered indices of active constraints for a problem of dimension ``dim``."""

    dim: int
    indices: tuple = ()

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(set(idx)) != len(idx):
            raise InvalidArgumentError(f"duplicate active indices {idx}")
        if any(not 0 <= i <= self.dim for i in idx):
            raise InvalidArgumentError(f"active index out of range for dim {self.dim}")
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)

    def __contains__(self, i):
        return int(i) in self.indices

    @property
    def coordinates(self):
        return [i for i in self.indices if i < self.dim]

    @property
    def has_sum(self):
        return self.dim in self.indices

    @property
    def rows(self):
        X = np.zeros((len(self.indices), self.dim))
        for r, i in enumerate(self.indices):
            if i == self.dim:
                X[r] = 1.0
            else:
                X[r, i] = -1.0
        return X

    def add(self, i):
        return ActiveSet(self.dim, self.indices + (int(i),))

    def drop_position(self, pos):
        idx = list(self.indices)
        del idx[pos]
        return ActiveSet(self.dim, tuple(idx))


@dataclass
class FitOptions:
    """Tuning knobs for :func:`fit`.

    ``delta=None`` selects the relative ridge ``1e-6 * median`` of the
    positive entries of ``diag(-H)``, floored at ``1e-10``; a float fixes
    the ridge instead.
    """

    epsilon: float = 1e-6
    delta: float = None
    max_iter: int = 500
    active_tol: float = 1e-10
    theta0: object = None

    def __post_init__(self):
        for name in ("epsilon", "active_tol"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be > 0")
        if self.delta is not None and not self.delta > 0:
            raise InvalidArgumentError("delta must be > 0")
        if self.max_iter < 1:
            raise InvalidArgumentError("max_iter must be >= 1")


@dataclass
class FitResult:
    """Outcome of :func:`fit`.

    ``trace`` holds one ``(loglik, norm_d, n_active)`` tuple per iteration,
    recorded at the iterate where the direction was computed. Its loglik
    column is the starting value plus the accepted line-search increments,
    which are computed without cancellation; it therefore never decreases
    and agrees with direct evaluation up to round-off.
    """

    theta_hat: ThetaVector
    loglik: float
    active: ActiveSet
    multipliers: np.ndarray
    iterations: int
    converged: bool
    norm_d: float
    stalled: bool = False
    trace: list = field(default_factory=list)


def ridge(hess, delta=None):
    """Ridge added to ``-H`` so that ``W`` is positive definite.

    The scale is the median of the positive diagonal entries of ``-H``: one
    near-zero probability (curvature of order ``1/P^2``) cannot inflate it,
    and coordinates without data support cannot shrink it.
    """
    if delta is not None:
        return float(delta)
    diag = -np.diag(hess)
    diag = diag[diag > 0]
    scale = float(np.median(diag)) if diag.size else 0.0
    return max(1e-6 * scale, 1e-10)


def _as_active(active, dim):
    if isinstance(active, ActiveSet):
        return active
    return ActiveSet(dim, tuple(active))


def _projection(grad, hess, active, delta):
    """Projected direction and multipliers from one factorization: ``(d, lam)``."""
    grad = np.asarray(grad, dtype=float)
    dim = grad.size
    active = _as_active(active, dim)
    W = -np.asarray(hess, dtype=float) + ridge(hess, delta) * np.eye(dim)
    Wc = cho_factor(W)
    Winv_g = cho_solve(Wc, grad)
    if not len(active):
        return Winv_g, np.empty(0)
    X = active.rows
    Winv_Xt = cho_solve(Wc, X.T)
    S = X @ Winv_Xt
    try:
        Sc = cho_factor(S)
    except np.linalg.LinAlgError as exc:
        raise BicensError(f"singular reduced system for active set {active.indices}") from exc
    lam = cho_solve(Sc, X @ Winv_g)
    d = Winv_g - Winv_Xt @ lam
    # The active rows force d_i = 0 and sum(d) = 0 exactly; remove round-off
    # so that iterates do not drift off the active faces.
    coords = active.coordinates
    d[coords] = 0.0
    if active.has_sum:
        free = np.ones(dim, dtype=bool)
        free[coords] = False
        if free.any():
            d[free] -= d.sum() / free.sum()
    return d, lam


def search_direction(theta, grad, hess, active, delta=None):
    """Feasible ascent direction ``{I - W^-1 X'(X W^-1 X')^-1 X} W^-1 grad``.

    Parameters
    ----------
    theta : array_like
        Current iterate (unused by the formula, kept for the call contract).
    grad, hess : ndarray
        Gradient and Hessian of the log-likelihood at ``theta``.
    active : ActiveSet or sequence of int
        Active constraints.
    delta : float, optional
        Ridge; ``None`` uses :func:`ridge`.
    """
    d, _ = _projection(grad, hess, active, delta)
    return d


def kkt_multipliers(theta, grad, hess, active, delta=None):
    """Multipliers ``(X W^-1 X')^-1 X W^-1 grad`` and the constraint to release.

    Returns
    -------
    lam : ndarray
        One multiplier per active row, in active-set order.
    drop : int or None
        Position in the active set of the most negative multiplier (ties go
        to the earliest position), or ``None`` when all are nonnegative.
    """
    _, lam = _projection(grad, hess, active, delta)
    if lam.size == 0 or lam.min() >= 0.0:
        return lam, None
    return lam, int(np.argmin(lam))


def max_step(theta, d, active=()):
    """Largest ``gamma`` with ``theta + gamma*d`` feasible (``inf`` if unbounded).

    Constraints listed in ``active`` are held by ``d`` itself and are skipped.
    """
    theta = np.asarray(theta, dtype=float)
    d = np.asarray(d, dtype=float)
    dim = theta.size
    skip = set(active.indices if isinstance(active, ActiveSet) else active)
    gamma = math.inf
    neg = d < 0
    if skip:
        neg &= ~np.isin(np.arange(dim), [i for i in skip if i < dim])
    if np.any(neg):
        gamma = float(np.min(-theta[neg] / d[neg]))
    total = float(d.sum())
    if total > 0 and dim not in skip:
        gamma = min(gamma, (1.0 - float(theta.sum())) / total)
    return max(gamma, 0.0)


def _safe_eval(f, x):
    try:
        return f(x)
    except NonFiniteLikelihoodError:
        return -math.inf


def line_search(theta, d, gamma, f, f0=None, gain=None):
    """Step-halving search; returns ``(theta_new, k, increment)``.

    Finds the smallest ``k >= 0`` with ``f(theta + gamma/2^k d) >= f(theta)``
    and moves to ``theta + min(gamma/2^k, 0.5) d``. Points where the
    likelihood is undefined count as failures. When ``gamma`` is infinite the
    trial multipliers are ``0.5/2^k``.

    ``gain``, if given, maps a step multiplier ``t`` to the exact increment
    ``f(theta + t d) - f(theta)`` and replaces the comparison of two rounded
    likelihood values.

    Raises
    ------
    StallError
        If no ``k <= 60`` succeeds.
    """
    theta = np.asarray(theta, dtype=float)
    d = np.asarray(d, dtype=float)
    if gain is None:
        if f0 is None:
            f0 = f(theta)

        def gain(t):
            return _safe_eval(f, theta + t * d) - f0

    base = STEP_CAP if math.isinf(gamma) else gamma
    for k in range(MAX_HALVINGS + 1):
        t = base * 0.5**k
        g_trial = gain(t)
        if not g_trial >= 0.0:
            continue
        if t <= STEP_CAP:
            return theta + t * d, k, g_trial
        g_new = gain(STEP_CAP)
        # Concavity guarantees this mathematically; guard against round-off.
        if g_new >= 0.0:
            return theta + STEP_CAP * d, k, g_new
    raise StallError(f"no improvement after {MAX_HALVINGS} halvings")


def update_active(theta_new, active, opts=None):
    """Add constraints that became binding at ``theta_new``.

    A coordinate is binding when it is ``<= active_tol``; the sum constraint
    when ``sum >= 1 - active_tol``. A row that would make the active rows rank
    deficient (all coordinates together with the sum) is not admitted.
    """
    tol = opts.active_tol if isinstance(opts, FitOptions) else (opts or 1e-10)
    theta_new = np.asarray(theta_new, dtype=float)
    dim = theta_new.size
    active = _as_active(active, dim)
    for i in np.nonzero(theta_new <= tol)[0]:
        if int(i) not in active:
            active = active.add(int(i))
    if theta_new.sum() >= 1.0 - tol and not active.has_sum:
        active = active.add(dim)
    if len(active.coordinates) == dim and active.has_sum:
        active = active.drop_position(active.indices.index(dim))
    return active


def _default_theta0(dim):
    return np.full(dim, 0.9 / dim)


def fit(spec, data, opts=None):
    """Sieve maximum likelihood estimate over the feasible polytope.

    Parameters
    ----------
    spec : SieveSpec
    data : Dataset or QuadrantDesign
    opts : FitOptions, optional

    Returns
    -------
    FitResult
        ``converged`` is False when ``max_iter`` is reached, or when the line
        search stalls away from a KKT point.

    Raises
    ------
    InfeasibleDataError
        If some observation has zero probability for every feasible theta.
    """
    opts = opts or FitOptions()
    design = data if isinstance(data, QuadrantDesign) else QuadrantDesign.from_data(spec, data)
    if design.n == 0:
        raise InvalidArgumentError("dataset is empty")
    bad = design.unattainable()
    if bad.size:
        raise InfeasibleDataError(bad)

    dim = spec.dim
    if opts.theta0 is None:
        theta = _default_theta0(dim)
    else:
        theta = (
            opts.theta0.flat() if isinstance(opts.theta0, ThetaVector)
            else np.array(opts.theta0, dtype=float)
        )
        if theta.size != dim:
            raise InvalidArgumentError(f"theta0 has {theta.size} entries, expected {dim}")
        if not check_feasible(theta):
            raise InvalidArgumentError("theta0 is infeasible")
    # Raises NonFiniteLikelihoodError if theta0 leaves an observation at zero.
    level = design.loglik(theta)

    active = update_active(theta, ActiveSet(dim), opts)
    trace = []
    converged = stalled = False
    lam = np.empty(0)
    norm_d = math.inf
    it = 0
    while it < opts.max_iter:
        it += 1
        _, grad, hess = design.all_derivatives(theta)
        d, lam = _projection(grad, hess, active, opts.delta)
        norm_d = float(np.linalg.norm(d))
        trace.append((level, norm_d, len(active)))
        # A short d can still promise a large gain when some probability is
        # tiny, since the Newton step there is of the size of the coordinate.
        stationary = norm_d < opts.epsilon and float(grad @ d) < opts.epsilon
        if stationary:
            drop = None if lam.size == 0 or lam.min() >= 0.0 else int(np.argmin(lam))
            if drop is None:
                converged = True
                break
            log.debug("releasing constraint %d (lambda=%.3g)", active.indices[drop], lam[drop])
            active = active.drop_position(drop)
            continue
        gamma = max_step(theta, d, active)
        try:
            theta, _, inc = line_search(
                theta, d, gamma, design.loglik, gain=design.gain(theta, d)
            )
        except StallError:
            stalled = True
            converged = stationary and (lam.size == 0 or lam.min() >= 0.0)
            warnings.warn(
                f"line search stalled at iteration {it} (||d||={norm_d:.3g})",
                RuntimeWarning,
                stacklevel=2,
            )
            break
        level += inc
        # Clear round-off below zero so every iterate passes check_feasible.
        np.maximum(theta, 0.0, out=theta)
        active = update_active(theta, active, opts)

    return FitResult(
        theta_hat=ThetaVector.from_flat(spec, theta),
        loglik=design.loglik(theta),
        active=active,
        multipliers=np.asarray(lam, dtype=float),
        iterations=it,
        converged=converged,
        norm_d=norm_d,
        stalled=stalled,
        trace=trace,
    )
