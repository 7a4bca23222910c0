"""Clayton-copula current-status simulation and Monte-Carlo bias/RMSE reports.

Event times are exponential with a common rate, coupled by a Clayton copula;
monitoring times are independent uniforms on ``[censor_lo, censor_hi]``.
Replication ``r`` draws from ``SeedSequence(seed, spawn_key=(r,))`` so serial
and parallel runs produce identical reports.
"""

import csv
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from bicens.errors import BicensError, InvalidArgumentError
from bicens.ggp_optimizer import FitOptions, fit
from bicens.sieve_model import Dataset, SieveSpec, cdf_grid
from bicens.spline_basis import build_knots

REPORT_POINTS = ((0.1, 0.1), (0.1, 4.6), (4.6, 0.1), (4.6, 4.6))
KNOT_RULE = "m = round(n^(1/3)) - 1"


def tau_to_alpha(tau):
    """Clayton parameter with Kendall's tau equal to ``tau``: ``(1+tau)/(1-tau)``."""
    tau = float(tau)
    if not 0.0 <= tau < 1.0:
        raise InvalidArgumentError(f"tau must lie in [0, 1), got {tau}")
    return (1.0 + tau) / (1.0 - tau)


def clayton_cdf(u, v, alpha):
    """Clayton copula ``(u^(1-a) + v^(1-a) - 1)^(1/(1-a))``; zero on the axes."""
    u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
    out = np.zeros(u.shape)
    pos = (u > 0) & (v > 0)
    e = 1.0 - alpha
    if e == 0.0:
        out[pos] = u[pos] * v[pos]
    else:
        out[pos] = np.exp(_log_inner(u[pos], v[pos], e) / e)
    return out if out.ndim else float(out)


def _log_inner(u, v, e):
    """``log(u^e + v^e - 1)`` without cancellation when ``e`` is near 0."""
    return np.log1p(np.expm1(e * np.log(u)) + np.expm1(e * np.log(v)))


def clayton_conditional(u, v, alpha):
    """``dC/du``, the conditional CDF of ``V`` given ``U = u``, at ``v``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    e = 1.0 - alpha
    return np.exp(-alpha * np.log(u) + (alpha / e) * _log_inner(u, v, e))


def clayton_sample(alpha, rng, size=None):
    """Draw ``(u, v)`` from the Clayton copula by conditional inversion.

    ``u`` and ``w`` are independent uniforms and ``v`` solves
    ``dC/du(u, v) = w``. Returns scalars when ``size`` is None.
    """
    if not alpha > 1.0:
        raise InvalidArgumentError(f"alpha must exceed 1, got {alpha}")
    u = rng.uniform(size=size)
    w = rng.uniform(size=size)
    e = 1.0 - alpha
    # ((w^(e/alpha) - 1) u^e + 1)^(1/e), written to stay accurate as alpha -> 1.
    inner = np.expm1((e / alpha) * np.log(w)) * np.exp(e * np.log(u))
    v = np.exp(np.log1p(inner) / e)
    if size is None:
        return float(u), float(v)
    return u, v


@dataclass(frozen=True)
class ClaytonTruth:
    """Closed-form joint and marginal CDFs of the simulated event times."""

    alpha: float
    rate: float

    def F1(self, s):
        return -np.expm1(-self.rate * np.asarray(s, dtype=float))

    F2 = F1

    def F(self, s, t):
        return clayton_cdf(self.F1(s), self.F2(t), self.alpha)


@dataclass
class SimConfig:
    """Monte-Carlo scenario; defaults follow the Clayton/exponential design."""

    n: int
    tau: float
    marginal_rate: float = 0.5
    censor_lo: float = 0.0201
    censor_hi: float = 4.7698
    domain: tuple = (0.0, 5.0, 0.0, 5.0)
    reps: int = 1
    seed: int = 0
    order: int = 4
    m: int = None
    epsilon: float = 1e-6
    max_iter: int = 500
    grid_lo: float = 0.1
    grid_hi: float = 4.7
    grid_step: float = 0.1
    workers: int = None

    def __post_init__(self):
        L1, U1, L2, U2 = self.domain
        if not 0.0 < self.tau < 1.0:
            raise InvalidArgumentError("tau must lie in (0, 1)")
        if self.n < 1 or self.reps < 1:
            raise InvalidArgumentError("n and reps must be >= 1")
        if not (max(L1, L2) < self.censor_lo < self.censor_hi < min(U1, U2)):
            raise InvalidArgumentError("censoring interval must lie strictly inside the domain")
        if self.seed < 0:
            raise InvalidArgumentError("seed must be nonnegative")

    @property
    def alpha(self):
        return tau_to_alpha(self.tau)

    @property
    def n_knots(self):
        return knot_count(self.n) if self.m is None else int(self.m)

    def truth(self):
        return ClaytonTruth(self.alpha, self.marginal_rate)

    def grid_axis(self):
        k = int(round((self.grid_hi - self.grid_lo) / self.grid_step))
        return np.round(self.grid_lo + self.grid_step * np.arange(k + 1), 12)


def knot_count(n):
    """Interior knot count ``round(n^(1/3)) - 1`` (4 for n=100, 5 for n=200)."""
    return max(int(round(n ** (1.0 / 3.0))) - 1, 0)


def current_status(event_times, monitoring_times):
    """Indicator that the event has happened by the monitoring time."""
    return (np.asarray(event_times) <= np.asarray(monitoring_times)).astype(int)


def generate_dataset(config, rng):
    """Simulate one dataset; returns ``(Dataset, ClaytonTruth)``."""
    u, v = clayton_sample(config.alpha, rng, size=config.n)
    t1 = -np.log1p(-u) / config.marginal_rate
    t2 = -np.log1p(-v) / config.marginal_rate
    c1 = rng.uniform(config.censor_lo, config.censor_hi, size=config.n)
    c2 = rng.uniform(config.censor_lo, config.censor_hi, size=config.n)
    data = Dataset(c1, c2, current_status(t1, c1), current_status(t2, c2))
    return data, config.truth()


def replication_rng(seed, r):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(r,)))


def fit_dataset(data, config):
    """Build per-axis quantile knots from the monitoring times and fit."""
    L1, U1, L2, U2 = config.domain
    m = config.n_knots
    spec = SieveSpec(
        build_knots(data.c1, m, config.order, L1, U1),
        build_knots(data.c2, m, config.order, L2, U2),
    )
    opts = FitOptions(epsilon=config.epsilon, max_iter=config.max_iter)
    return spec, fit(spec, data, opts)


def _replicate(config, r):
    rng = replication_rng(config.seed, r)
    data, _ = generate_dataset(config, rng)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        spec, res = fit_dataset(data, config)
    axis = config.grid_axis()
    F, F1, F2 = cdf_grid(spec, res.theta_hat, axis, axis)
    ps = np.array([p[0] for p in REPORT_POINTS])
    pt = np.array([p[1] for p in REPORT_POINTS])
    Fp = np.diag(cdf_grid(spec, res.theta_hat, ps, pt)[0])
    return {
        "r": r,
        "converged": res.converged,
        "iterations": res.iterations,
        "F": F,
        "F1": F1,
        "F2": F2,
        "Fp": Fp,
    }


def _worker_count(config):
    if config.workers is not None:
        return max(1, int(config.workers))
    env = os.environ.get("BICENS_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, config.reps))


def run_replications(config, indices):
    workers = _worker_count(config)
    if workers == 1:
        return [_replicate(config, r) for r in indices]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_replicate, [config] * len(indices), indices))


@dataclass
class McReport:
    """Bias/RMSE of the sieve estimate against the closed-form truth.

    Grids are indexed ``[i, j]`` for ``(axis[i], axis[j])``. Point statistics
    follow ``points``. Standard errors are over replications: ``sd/sqrt(R)``
    for the bias and the delta-method value ``sd(e^2) / (2 rmse sqrt(R))``
    for the RMSE.
    """

    config: SimConfig
    axis: np.ndarray
    bias: np.ndarray
    rmse: np.ndarray
    overall_abs_bias: float
    overall_rmse: float
    marginal1_bias: np.ndarray
    marginal1_rmse: np.ndarray
    marginal2_bias: np.ndarray
    marginal2_rmse: np.ndarray
    points: tuple
    point_bias: np.ndarray
    point_rmse: np.ndarray
    point_bias_se: np.ndarray
    point_rmse_se: np.ndarray
    d_distance: np.ndarray
    replications: int
    failures: int
    mean_iterations: float
    knot_rule: str = KNOT_RULE
    grid: list = field(default_factory=list)

    def __post_init__(self):
        if not self.grid:
            self.grid = [(float(s), float(t)) for s in self.axis for t in self.axis]


def _rmse_se(err, rmse):
    R = err.shape[0]
    if R < 2:
        return np.zeros(err.shape[1:])
    sd = np.std(err**2, axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(rmse > 0, sd / (2.0 * rmse * math.sqrt(R)), 0.0)


def aggregate(config, results):
    """Reduce replication results (in replication order) into an :class:`McReport`."""
    ok = [res for res in results if res["converged"]]
    failures = len(results) - len(ok)
    if not ok:
        raise BicensError(f"all {len(results)} replications failed to converge")
    if failures:
        warnings.warn(f"{failures} non-converged replication(s) excluded", RuntimeWarning)

    truth = config.truth()
    axis = config.grid_axis()
    F0 = truth.F(axis[:, None], axis[None, :])
    F01 = truth.F1(axis)
    ps = np.array([p[0] for p in REPORT_POINTS])
    pt = np.array([p[1] for p in REPORT_POINTS])
    F0p = truth.F(ps, pt)

    eF = np.stack([res["F"] for res in ok]) - F0
    e1 = np.stack([res["F1"] for res in ok]) - F01
    e2 = np.stack([res["F2"] for res in ok]) - F01
    ep = np.stack([res["Fp"] for res in ok]) - F0p
    R = len(ok)

    bias = eF.mean(axis=0)
    rmse = np.sqrt((eF**2).mean(axis=0))
    pbias = ep.mean(axis=0)
    prmse = np.sqrt((ep**2).mean(axis=0))
    pbias_se = ep.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros(len(REPORT_POINTS))
    d = np.sqrt(
        (eF**2).mean(axis=(1, 2)) + (e1**2).mean(axis=1) + (e2**2).mean(axis=1)
    )
    return McReport(
        config=config,
        axis=axis,
        bias=bias,
        rmse=rmse,
        overall_abs_bias=float(np.mean(np.abs(bias))),
        overall_rmse=float(np.mean(rmse)),
        marginal1_bias=e1.mean(axis=0),
        marginal1_rmse=np.sqrt((e1**2).mean(axis=0)),
        marginal2_bias=e2.mean(axis=0),
        marginal2_rmse=np.sqrt((e2**2).mean(axis=0)),
        points=REPORT_POINTS,
        point_bias=pbias,
        point_rmse=prmse,
        point_bias_se=pbias_se,
        point_rmse_se=_rmse_se(ep, prmse),
        d_distance=d,
        replications=len(results),
        failures=failures,
        mean_iterations=float(np.mean([res["iterations"] for res in results])),
    )


def run_monte_carlo(config):
    """Run ``config.reps`` simulate-and-fit replications and aggregate them.

    Non-converged fits are counted in ``failures`` and excluded.

    Raises
    ------
    BicensError
        If every replication failed.
    """
    results = run_replications(config, list(range(config.reps)))
    return aggregate(config, results)


def _g(x):
    return f"{x:.17g}"


def write_report(report, out_dir):
    """Write ``grid.csv``, ``marginals.csv``, ``points.csv`` and ``summary.txt``."""
    os.makedirs(out_dir, exist_ok=True)
    axis = report.axis
    with open(os.path.join(out_dir, "grid.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "t", "bias", "rmse"])
        for i, s in enumerate(axis):
            for j, t in enumerate(axis):
                w.writerow([_g(s), _g(t), _g(report.bias[i, j]), _g(report.rmse[i, j])])
    with open(os.path.join(out_dir, "marginals.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "bias1", "rmse1", "bias2", "rmse2"])
        for k, x in enumerate(axis):
            w.writerow([
                _g(x),
                _g(report.marginal1_bias[k]),
                _g(report.marginal1_rmse[k]),
                _g(report.marginal2_bias[k]),
                _g(report.marginal2_rmse[k]),
            ])
    with open(os.path.join(out_dir, "points.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "t", "bias", "rmse", "bias_se", "rmse_se"])
        for k, (s, t) in enumerate(report.points):
            w.writerow([
                _g(s), _g(t),
                _g(report.point_bias[k]), _g(report.point_rmse[k]),
                _g(report.point_bias_se[k]), _g(report.point_rmse_se[k]),
            ])
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write(summary_text(report))


def summary_text(report):
    c = report.config
    lines = [
        f"n = {c.n}",
        f"tau = {_g(c.tau)}",
        f"alpha = {_g(c.alpha)}",
        f"reps = {report.replications}",
        f"seed = {c.seed}",
        f"order = {c.order}",
        f"interior_knots = {c.n_knots}",
        f"knot_rule = {report.knot_rule}",
        f"failures = {report.failures}",
        f"mean_iterations = {_g(report.mean_iterations)}",
        f"overall_abs_bias = {_g(report.overall_abs_bias)}",
        f"overall_rmse = {_g(report.overall_rmse)}",
        f"median_d_distance = {_g(float(np.median(report.d_distance)))}",
    ]
    for k, (s, t) in enumerate(report.points):
        lines.append(
            f"point({s},{t}) bias = {_g(report.point_bias[k])} "
            f"rmse = {_g(report.point_rmse[k])}"
        )
    return "\n".join(lines) + "\n"
