"""Fisher information and the location-error lower bound.

The information each sensor contributes factorizes into a rank-one
geometry matrix (outer product of the power-gradient direction), a
Gaussian weight from the quantizer operating point, and a scalar
integral over the energy mixture that captures how distinguishable the
two transmit symbols are at the fusion center.  The bound on mean
squared location error is the trace of the inverse information matrix
over the two position coordinates, and quantization thresholds are
chosen to minimize exactly that bound.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import ndtr

from .errors import DegenerateGeometry, QuadratureFailure, SingularFim
from .geometry import NetworkGeometry, SourceParams, distances
from .signal_model import SensorEnsembleConfig, received_power

CONDITION_LIMIT = 1e12

# 15-point Kronrod nodes on [-1, 1] with their weights; the embedded
# 7-point Gauss rule uses the odd-index nodes.
_KRONROD_NODES = np.array([
    -0.991455371120813, -0.949107912342759, -0.864864423359769,
    -0.741531185599394, -0.586087235467691, -0.405845151377397,
    -0.207784955007898, 0.0, 0.207784955007898, 0.405845151377397,
    0.586087235467691, 0.741531185599394, 0.864864423359769,
    0.949107912342759, 0.991455371120813,
])
_KRONROD_WEIGHTS = np.array([
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728, 0.204432940075298,
    0.190350578064785, 0.169004726639267, 0.140653259715525,
    0.104790010322250, 0.063092092629979, 0.022935322010529,
])
_GAUSS_IDX = np.arange(1, 15, 2)
_GAUSS_WEIGHTS = np.array([
    0.129484966168870, 0.279705391489277, 0.381830050505119,
    0.417959183673469, 0.381830050505119, 0.279705391489277,
    0.129484966168870,
])


def _gk15(f, a: float, b: float):
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    fx = f(mid + half * _KRONROD_NODES)
    kron = half * float(_KRONROD_WEIGHTS @ fx)
    gauss = half * float(_GAUSS_WEIGHTS @ fx[_GAUSS_IDX])
    return kron, abs(kron - gauss)


def _adaptive_quad(f, breakpoints, abs_tol: float, rel_tol: float, max_intervals: int = 1024):
    """Adaptive Gauss-Kronrod over the union of the given panels."""
    heap = []
    total = 0.0
    err = 0.0
    for a, b in zip(breakpoints[:-1], breakpoints[1:]):
        val, e = _gk15(f, a, b)
        heapq.heappush(heap, (-e, a, b, val))
        total += val
        err += e
    n = len(heap)
    while err > max(abs_tol, rel_tol * abs(total)):
        if n >= max_intervals:
            raise QuadratureFailure(
                f"quadrature error {err:.3e} above tolerance after {n} panels"
            )
        neg_e, a, b, val = heapq.heappop(heap)
        total -= val
        err += neg_e  # neg_e is -e
        m = 0.5 * (a + b)
        v1, e1 = _gk15(f, a, m)
        v2, e2 = _gk15(f, m, b)
        heapq.heappush(heap, (-e1, a, m, v1))
        heapq.heappush(heap, (-e2, m, b, v2))
        total += v1 + v2
        err += e1 + e2
        n += 1
    return total, err


def mixture_integral(
    P_i: float,
    beta_i: float,
    sigma_i: float,
    eb: float,
    tau2: float,
    *,
    abs_tol: float = 1e-10,
    rel_tol: float = 1e-8,
) -> float:
    """Scalar information integral of the energy mixture.

    Integrates (difference of the two symbol densities)^2 over the
    marginal density on [0, inf).  The integration window is extended
    past any late crossover between mixture branches, and the remaining
    tail is bounded analytically; the tail decays at least like
    exp(-t / (eb + tau2)) once the slow branch dominates.
    """
    if eb == 0.0:
        return 0.0
    a = 1.0 / (eb + tau2)
    b = 1.0 / tau2
    s = (math.sqrt(P_i) - beta_i) / sigma_i
    q0 = float(ndtr(-s))
    q1 = float(ndtr(s))

    def integrand(t):
        u = np.exp(-(b - a) * t)  # ratio of fast to slow branch
        den = q1 * a + q0 * b * u
        num = (a - b * u) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.exp(-a * t) * num / den
        if q1 == 0.0:
            # fast branch underflowed: take the analytic limit form
            val = np.where(den > 0.0, val, a * a * np.exp((b - 2.0 * a) * t) / (q0 * b))
        return val

    t_star = math.log(b / a) / (b - a)  # where the two branch densities cross
    t_end = 50.0 / a
    if 0.0 < q1 < q0:
        t_cross = math.log(q0 * b / (q1 * a)) / (b - a)
        t_end = max(t_end, t_cross + 60.0 / a)
    t_end = max(t_end, t_star)

    if q1 > 0.0:
        tail_bound = math.exp(-a * t_end) / q1
    elif 2.0 * a > b:
        tail_bound = a * a * math.exp(-(2.0 * a - b) * t_end) / (q0 * b * (2.0 * a - b))
    else:
        raise QuadratureFailure(
            "mixture integral diverges: the one-branch weight underflowed "
            "and the squared fast branch decays slower than the density"
        )

    breaks = sorted({0.0, min(2.0 * tau2, t_end), min(10.0 * tau2, t_end), min(t_star, t_end), t_end})
    value, _ = _adaptive_quad(integrand, breaks, abs_tol, rel_tol)
    if tail_bound > max(abs_tol, rel_tol * abs(value)):
        raise QuadratureFailure(
            f"tail bound {tail_bound:.3e} above tolerance at t={t_end:.3e}"
        )
    return value


def g_matrix(theta: SourceParams, sensor, d0: float, alpha: float) -> np.ndarray:
    """Rank-one geometry factor of one sensor's information contribution.

    Outer product v v^T with v = [-1/sqrt(P0),
    sqrt(P0)*alpha*(xT-x_i)/d^2, sqrt(P0)*alpha*(yT-y_i)/d^2].
    """
    sensor = np.asarray(sensor, dtype=float)
    dx = theta.xT - sensor[0]
    dy = theta.yT - sensor[1]
    d2 = dx * dx + dy * dy
    if d2 == 0.0:
        raise DegenerateGeometry("sensor coincides with the source")
    sqrt_p0 = math.sqrt(theta.P0)
    v = np.array([-1.0 / sqrt_p0, sqrt_p0 * alpha * dx / d2, sqrt_p0 * alpha * dy / d2])
    return np.outer(v, v)


def fisher_information(
    theta: SourceParams,
    geom: NetworkGeometry,
    cfg: SensorEnsembleConfig,
) -> np.ndarray:
    """3x3 information matrix for (P0, xT, yT), summed over sensors.

    Terms whose Gaussian quantizer weight underflows to zero are skipped:
    such a sensor's bit is deterministic and carries no information.
    Summation is in sensor-index order for bitwise reproducibility.
    """
    sigma2, beta, eb, tau2 = cfg.resolved(geom.K)
    d = distances(geom, source=theta)
    if np.any(d == 0.0):
        raise DegenerateGeometry("sensor coincides with the source")
    P = received_power(theta.P0, cfg.d0, cfg.alpha, d)
    sqrt_p = np.sqrt(P)
    x = (sqrt_p - beta) / np.sqrt(sigma2)
    weight = P * np.exp(-x * x) / (8.0 * np.pi * sigma2 * theta.P0)

    fim = np.zeros((3, 3))
    for i in range(geom.K):
        if weight[i] == 0.0:
            continue
        scalar = mixture_integral(P[i], beta[i], math.sqrt(sigma2[i]), eb[i], tau2[i])
        fim += (weight[i] * scalar) * g_matrix(theta, geom.sensors[i], cfg.d0, cfg.alpha)
    return fim


@dataclass
class CrlbResult:
    """Location-error bound: sgle_bound = [I^-1]_xx + [I^-1]_yy."""

    sgle_bound: float
    fim: np.ndarray
    condition_indicator: float


def condition_indicator(fim: np.ndarray) -> float:
    """Ratio of extreme absolute eigenvalues (inf when rank-deficient)."""
    w = np.abs(np.linalg.eigvalsh(fim))
    if w.max() == 0.0 or w.min() == 0.0:
        return np.inf
    return float(w.max() / w.min())


def per_sensor_term_norms(
    theta: SourceParams,
    geom: NetworkGeometry,
    cfg: SensorEnsembleConfig,
) -> np.ndarray:
    """Frobenius norm of each sensor's information contribution."""
    sigma2, beta, eb, tau2 = cfg.resolved(geom.K)
    d = distances(geom, source=theta)
    if np.any(d == 0.0):
        raise DegenerateGeometry("sensor coincides with the source")
    P = received_power(theta.P0, cfg.d0, cfg.alpha, d)
    x = (np.sqrt(P) - beta) / np.sqrt(sigma2)
    weight = P * np.exp(-x * x) / (8.0 * np.pi * sigma2 * theta.P0)
    norms = np.zeros(geom.K)
    for i in range(geom.K):
        if weight[i] == 0.0:
            continue
        scalar = mixture_integral(P[i], beta[i], math.sqrt(sigma2[i]), eb[i], tau2[i])
        norms[i] = weight[i] * scalar * np.linalg.norm(
            g_matrix(theta, geom.sensors[i], cfg.d0, cfg.alpha)
        )
    return norms


def crlb_sgle(
    theta: SourceParams,
    geom: NetworkGeometry,
    cfg: SensorEnsembleConfig,
    fim: "np.ndarray | None" = None,
) -> CrlbResult:
    """Lower bound on mean squared location error for this geometry.

    Raises SingularFim when the information matrix's condition indicator
    exceeds CONDITION_LIMIT (e.g. a single sensor or collinear layout).
    """
    if fim is None:
        fim = fisher_information(theta, geom, cfg)
    cond = condition_indicator(fim)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise SingularFim(cond)
    with np.errstate(over="ignore", invalid="ignore"):
        inv = np.linalg.inv(fim)
        bound = float(inv[1, 1] + inv[2, 2])
    # an all-subnormal FIM can sneak past the eigenvalue ratio and then
    # overflow the inverse; a bound that is not a positive finite number
    # means the matrix was numerically singular after all
    if not np.isfinite(bound) or bound <= 0.0:
        raise SingularFim(cond, "information matrix inverse is not usable")
    return CrlbResult(sgle_bound=bound, fim=fim, condition_indicator=cond)


def crlb_result_to_dict(result: CrlbResult) -> dict:
    """JSON-ready view of a CrlbResult."""
    eigvals = np.linalg.eigvalsh(result.fim)
    return {
        "sgle_bound": result.sgle_bound,
        "condition_indicator": result.condition_indicator,
        "fim": [[float(v) for v in row] for row in result.fim],
        "fim_eigenvalues": [float(v) for v in eigvals],
    }


# --- threshold optimization -------------------------------------------------


@dataclass
class ThresholdResult:
    """Optimized quantization threshold(s) and the bound they achieve."""

    beta: Union[float, np.ndarray]
    sgle_bound: float
    mode: str


def _bound_or_inf(theta, geom, cfg) -> float:
    try:
        return crlb_sgle(theta, geom, cfg).sgle_bound
    except SingularFim:
        return np.inf


def _golden_section(f, lo: float, hi: float, tol: float, evaluated: list):
    """Golden-section refinement; appends every probe to ``evaluated``."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = hi - invphi * (hi - lo)
    d = lo + invphi * (hi - lo)
    fc, fd = f(c), f(d)
    evaluated.extend([(fc, c), (fd, d)])
    while hi - lo > tol:
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - invphi * (hi - lo)
            fc = f(c)
            evaluated.append((fc, c))
        else:
            lo, c, fc = c, d, fd
            d = lo + invphi * (hi - lo)
            fd = f(d)
            evaluated.append((fd, d))


def optimize_thresholds(
    theta: SourceParams,
    geom: NetworkGeometry,
    cfg: SensorEnsembleConfig,
    mode: str = "common",
    *,
    n_coarse: int = 64,
) -> ThresholdResult:
    """Pick quantization threshold(s) minimizing the location-error bound.

    Common mode scans ``n_coarse`` points over
    [-3*sigma_max, sqrt(P0) + 3*sigma_max], golden-section refines the
    best local basins, and returns the best point actually evaluated.
    Per-sensor mode runs coordinate descent from the common solution,
    updating one sensor's information term at a time.

    The bound is evaluated at the true source parameters, so this is a
    benchmarking (genie-aided) policy, not a deployable protocol.
    """
    if mode not in ("common", "per-sensor"):
        raise ValueError(f"unknown threshold mode {mode!r}")
    sigma_max = float(np.sqrt(np.max(np.asarray(cfg.sigma2))))
    lo = -3.0 * sigma_max
    hi = math.sqrt(theta.P0) + 3.0 * sigma_max
    tol = 1e-4 * math.sqrt(theta.P0)

    def common_objective(beta):
        return _bound_or_inf(theta, geom, cfg.with_beta(float(beta)))

    grid = np.linspace(lo, hi, n_coarse)
    objs = np.array([common_objective(b) for b in grid])
    if not np.any(np.isfinite(objs)):
        raise SingularFim(np.inf, "no threshold in the bracket yields an invertible FIM")

    evaluated = list(zip(objs.tolist(), grid.tolist()))
    # Refine the three best local basins: a coarse grid this wide can
    # straddle more than one minimum of the aggregated bound.
    basin_order = np.argsort(objs, kind="stable")
    refined = set()
    for k in basin_order[: min(3, len(basin_order))]:
        if not np.isfinite(objs[k]):
            break
        span = (max(0, k - 1), min(len(grid) - 1, k + 1))
        if span in refined:
            continue
        refined.add(span)
        _golden_section(common_objective, grid[span[0]], grid[span[1]], tol, evaluated)

    best_obj, best_beta = min(evaluated, key=lambda p: (p[0], p[1]))
    if mode == "common":
        return ThresholdResult(beta=float(best_beta), sgle_bound=float(best_obj), mode=mode)

    # Coordinate descent on per-sensor thresholds, warm-started from the
    # common solution.  Only sensor i's term changes when beta_i moves,
    # so the remainder of the FIM is cached per sweep.
    sigma2, _, eb, tau2 = cfg.resolved(geom.K)
    sigma = np.sqrt(sigma2)
    d = distances(geom, source=theta)
    P = received_power(theta.P0, cfg.d0, cfg.alpha, d)
    g_mats = [g_matrix(theta, geom.sensors[i], cfg.d0, cfg.alpha) for i in range(geom.K)]

    def term(i, beta_i):
        x = (math.sqrt(P[i]) - beta_i) / sigma[i]
        w = P[i] * math.exp(-x * x) / (8.0 * np.pi * sigma2[i] * theta.P0)
        if w == 0.0:
            return np.zeros((3, 3))
        return (w * mixture_integral(P[i], beta_i, sigma[i], eb[i], tau2[i])) * g_mats[i]

    def bound_of(fim):
        cond = condition_indicator(fim)
        if not np.isfinite(cond) or cond > CONDITION_LIMIT:
            return np.inf
        with np.errstate(over="ignore", invalid="ignore"):
            inv = np.linalg.inv(fim)
            val = float(inv[1, 1] + inv[2, 2])
        return val if np.isfinite(val) and val > 0.0 else np.inf

    betas = np.full(geom.K, best_beta)
    terms = [term(i, betas[i]) for i in range(geom.K)]
    current = best_obj
    for _ in range(3):
        improved = False
        for i in range(geom.K):
            rest = sum(terms) - terms[i]
            probes = []

            def coord_objective(beta_i, i=i, rest=rest):
                return bound_of(rest + term(i, beta_i))

            _golden_section(coord_objective, lo, hi, tol, probes)
            probes.append((current, betas[i]))
            obj_i, beta_i = min(probes, key=lambda p: (p[0], p[1]))
            if obj_i < current:
                improved = True
                current = obj_i
                betas[i] = beta_i
                terms[i] = term(i, beta_i)
        if not improved:
            break
    return ThresholdResult(beta=betas, sgle_bound=float(current), mode=mode)
