"""Knot sequences and M-, I- and normalized B-spline bases on a bounded interval.

Order convention
----------------
Everything is indexed by the B-spline *order* ``l`` of a :class:`KnotVector`
(``l = 4`` is cubic). On an extended knot sequence ``t`` with ``l``-fold
boundary knots there are ``p = m + l`` functions of each kind:

* ``M_i`` is the M-spline of order ``l`` (integrates to one),
* ``N_i`` is the normalized B-spline of order ``l`` (partition of unity),
* ``I_i`` is the I-spline built by integrating ``M_i``; it is a piecewise
  polynomial of degree ``l - 1`` and satisfies ``I_i = sum_{m >= i} N_m``.

Ramsay's notation writes the same I-spline with superscript ``l - 1``; here the
single ``order`` argument always refers to the knot order ``l``. Basis indices
are zero-based, so ``I_0`` is identically one on ``[L, U]`` and every other
``I_i`` rises from 0 at ``L`` to 1 at ``U``.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from bicens.errors import InvalidArgumentError

__all__ = [
    "KnotVector",
    "build_knots",
    "mspline_basis",
    "bspline_basis",
    "ispline_basis",
    "mspline_eval",
    "bspline_eval",
    "ispline_eval",
]


@dataclass(frozen=True, eq=False)
class KnotVector:
    """An extended knot sequence with ``order``-fold boundary knots.

    Parameters
    ----------
    order : int
        B-spline order ``l >= 1``.
    interior : array_like
        Strictly increasing interior knots, all inside ``(lower, upper)``.
    lower, upper : float
        Boundary knots ``L < U``.
    n_collapsed : int
        Number of requested interior knots dropped because they coincided
        with another knot (set by :func:`build_knots`).
    """

    order: int
    interior: np.ndarray
    lower: float
    upper: float
    n_collapsed: int = 0
    extended: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        order = int(self.order)
        interior = np.array(self.interior, dtype=float).reshape(-1)
        lower, upper = float(self.lower), float(self.upper)
        if order < 1:
            raise InvalidArgumentError(f"order must be >= 1, got {order}")
        if not lower < upper:
            raise InvalidArgumentError(f"need lower < upper, got [{lower}, {upper}]")
        if interior.size and (
            np.any(np.diff(interior) <= 0)
            or interior[0] <= lower
            or interior[-1] >= upper
        ):
            raise InvalidArgumentError(
                "interior knots must be strictly increasing and inside (lower, upper)"
            )
        interior.setflags(write=False)
        extended = np.concatenate(
            [np.full(order, lower), interior, np.full(order, upper)]
        )
        extended.setflags(write=False)
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "interior", interior)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "extended", extended)

    @property
    def n_interior(self):
        return self.interior.size

    @property
    def n_basis(self):
        """Number of basis functions ``p = m + l``."""
        return self.interior.size + self.order

    def __eq__(self, other):
        if not isinstance(other, KnotVector):
            return NotImplemented
        return (
            self.order == other.order
            and self.lower == other.lower
            and self.upper == other.upper
            and np.array_equal(self.interior, other.interior)
        )

    def __hash__(self):
        return hash((self.order, self.lower, self.upper, self.interior.tobytes()))


def build_knots(samples, m, l, L, U):
    """Place ``m`` interior knots at the ``k/(m+1)`` sample quantiles.

    Quantiles interpolate linearly between adjacent order statistics. Knots
    that coincide with each other or with a boundary are collapsed, which
    lowers the effective ``m``; the number dropped is recorded in
    ``KnotVector.n_collapsed`` and a :class:`UserWarning` is issued.

    Parameters
    ----------
    samples : array_like
        Observed values in ``[L, U]``, e.g. monitoring times on one axis.
    m : int
        Requested number of interior knots.
    l : int
        Spline order.
    L, U : float
        Boundary knots.

    Returns
    -------
    KnotVector
    """
    samples = np.asarray(samples, dtype=float).reshape(-1)
    if m < 0:
        raise InvalidArgumentError(f"m must be >= 0, got {m}")
    if l < 1:
        raise InvalidArgumentError(f"order must be >= 1, got {l}")
    if samples.size == 0:
        raise InvalidArgumentError("samples must be nonempty")
    if not L < U:
        raise InvalidArgumentError(f"need L < U, got [{L}, {U}]")
    if np.any(samples < L) or np.any(samples > U):
        raise InvalidArgumentError(f"samples must lie in [{L}, {U}]")

    if m == 0:
        return KnotVector(l, np.empty(0), L, U)
    probs = np.arange(1, m + 1) / (m + 1)
    q = np.quantile(samples, probs, method="linear")
    interior = np.unique(q)
    interior = interior[(interior > L) & (interior < U)]
    dropped = m - interior.size
    if dropped:
        warnings.warn(
            f"{dropped} duplicate knot(s) collapsed; using m={interior.size}",
            UserWarning,
            stacklevel=2,
        )
    return KnotVector(l, interior, L, U, n_collapsed=dropped)


def _knots_and_order(knots, order):
    if isinstance(knots, KnotVector):
        t = knots.extended
        if order is None:
            order = knots.order
    else:
        t = np.asarray(knots, dtype=float).reshape(-1)
        if t.size < 2 or np.any(np.diff(t) < 0) or not t[0] < t[-1]:
            raise InvalidArgumentError("knot sequence must be nondecreasing with t[0] < t[-1]")
        if order is None:
            raise InvalidArgumentError("order is required for a raw knot sequence")
    order = int(order)
    if order < 1 or order > t.size - 1:
        raise InvalidArgumentError(
            f"order {order} invalid for a sequence of {t.size} knots"
        )
    return t, order


def _safe_div(num, den):
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den != 0)
    return out


def _order_one(t, s, right_closed):
    """Indicators of ``[t_k, t_{k+1})`` for every knot interval, shape (n_s, len(t)-1).

    With ``right_closed`` the point ``s == t[-1]`` is assigned to the last
    nonempty interval, giving left-limit values at the right boundary.
    """
    left, right = t[:-1], t[1:]
    ind = (s[:, None] >= left) & (s[:, None] < right)
    if right_closed:
        last = np.nonzero(right > left)[0][-1]
        ind[s == t[-1], last] = True
    return ind.astype(float)


def _bspline_all(t, order, s, right_closed=True):
    s = np.asarray(s, dtype=float)
    N = _order_one(t, s, right_closed)
    for k in range(2, order + 1):
        cnt = t.size - k
        ti = t[:cnt]
        w1 = _safe_div(s[:, None] - ti, t[k - 1 : k - 1 + cnt] - ti)
        w2 = _safe_div(t[k : k + cnt] - s[:, None], t[k : k + cnt] - t[1 : 1 + cnt])
        N = w1 * N[:, :cnt] + w2 * N[:, 1 : cnt + 1]
    return N


def _mspline_all(t, order, s, right_closed=False):
    s = np.asarray(s, dtype=float)
    M = _safe_div(_order_one(t, s, right_closed), np.diff(t))
    for k in range(2, order + 1):
        cnt = t.size - k
        ti = t[:cnt]
        tk = t[k : k + cnt]
        num = k * ((s[:, None] - ti) * M[:, :cnt] + (tk - s[:, None]) * M[:, 1 : cnt + 1])
        M = _safe_div(num, (k - 1) * (tk - ti))
    return M


def _ispline_all(t, order, s):
    lo, hi = t[0], t[-1]
    s = np.clip(np.asarray(s, dtype=float), lo, hi)
    M = _mspline_all(t, order, s, right_closed=True)
    p = M.shape[1]
    # Terms (t_{i+l} - t_i) M_i / l of the partial sums.
    terms = M * ((t[order : order + p] - t[:p]) / order)
    partial = np.cumsum(terms[:, ::-1], axis=1)[:, ::-1]

    # Span j with t_j <= s < t_{j+1}; s == U uses the last nonempty span.
    nonempty = np.nonzero(t[1:] > t[:-1])[0]
    j = np.searchsorted(t, s, side="right") - 1
    j = np.minimum(j, nonempty[-1])
    i = np.arange(p)
    below = i[None, :] < (j - order + 1)[:, None]
    above = i[None, :] > j[:, None]
    # Partial sums of nonnegative terms can overshoot 1 by an ulp.
    out = np.where(below, 1.0, np.minimum(partial, 1.0))
    out[above] = 0.0
    return out


def _as_points(s):
    arr = np.asarray(s, dtype=float)
    return arr.reshape(-1), arr.shape


def mspline_basis(knots, s, order=None):
    """Evaluate every M-spline at points ``s``.

    Returns an array of shape ``(len(s), n_basis)``. Values are zero outside
    ``[t[0], t[-1])``.
    """
    t, order = _knots_and_order(knots, order)
    pts, _ = _as_points(s)
    return _mspline_all(t, order, pts, right_closed=False)


def bspline_basis(knots, s, order=None):
    """Evaluate every normalized B-spline at points ``s``.

    Returns an array of shape ``(len(s), n_basis)``. Values are zero outside
    ``[t[0], t[-1]]``; at ``t[-1]`` the left limit is returned so that the
    rows always sum to one on the closed interval.
    """
    t, order = _knots_and_order(knots, order)
    pts, _ = _as_points(s)
    return _bspline_all(t, order, pts, right_closed=True)


def ispline_basis(knots, s, order=None):
    """Evaluate every I-spline at points ``s`` (clamped to ``[t[0], t[-1]]``).

    Returns an array of shape ``(len(s), n_basis)`` with entries in ``[0, 1]``.
    """
    t, order = _knots_and_order(knots, order)
    pts, _ = _as_points(s)
    return _ispline_all(t, order, pts)


def _single(fn, knots, order, i, s):
    t, order = _knots_and_order(knots, order)
    count = t.size - order
    if not 0 <= int(i) < count:
        raise InvalidArgumentError(f"basis index {i} out of range [0, {count})")
    pts, shape = _as_points(s)
    vals = fn(t, order, pts)[:, int(i)]
    return float(vals[0]) if shape == () else vals.reshape(shape)


def mspline_eval(knots, order, i, s):
    """Value of the ``i``-th (zero-based) M-spline of the given order at ``s``.

    ``knots`` may be a :class:`KnotVector` (``order=None`` uses its order) or a
    raw nondecreasing knot sequence.

    Examples
    --------
    >>> mspline_eval([0.0, 1.0], 1, 0, 0.5)
    1.0
    """
    return _single(lambda t, o, x: _mspline_all(t, o, x, False), knots, order, i, s)


def bspline_eval(knots, order, i, s):
    """Value of the ``i``-th normalized B-spline at ``s``."""
    return _single(lambda t, o, x: _bspline_all(t, o, x, True), knots, order, i, s)


def ispline_eval(knots, order, i, s):
    """Value of the ``i``-th I-spline at ``s``; see the module notes on order."""
    return _single(_ispline_all, knots, order, i, s)
