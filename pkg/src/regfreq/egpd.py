"""Extended generalized Pareto distribution with power flexibility G(u) = u**kappa.

Wet-day data are values above a threshold ``u``; every fit treats them as a
sample from the EGPD left-truncated at ``u``. The distribution of a site is
``sigma`` times a cluster-normalized law, so regional models share
(kappa, xi) within a cluster and keep one sigma per site.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from scipy import integrate, optimize

from .pwm import estimate_pwm
from .special import upper_beta

log = logging.getLogger(__name__)

XI_BOUNDS = (0.0, 0.9)
KAPPA_BOUNDS = (1e-2, 50.0)
SMALL_XI = 1e-6
MIN_FIT_SIZE = 30
REGIONAL_EPS = 1e-3
REGIONAL_MAX_ITER = 500


class Level(str, enum.Enum):
    LOCAL = "LOCAL"
    SEMIREGIONAL = "SEMIREGIONAL"
    REGIONAL = "REGIONAL"


class FitError(RuntimeError):
    """A site could not be fitted; the caller flags it as unfitted."""


@dataclass(frozen=True)
class EgpdParams:
    kappa: float
    sigma: float
    xi: float
    level: Level = Level.LOCAL
    cluster_id: int | None = None
    converged: bool = True
    method: str = "pwm"
    iterations: int = 0

    def __post_init__(self):
        if not (self.kappa > 0 and math.isfinite(self.kappa)):
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not (0.0 <= self.xi < 1.0):
            raise ValueError(f"xi must lie in [0, 1), got {self.xi}")


# ---------------------------------------------------------------------------
# distribution functions


def _log_gpd_sf(params: EgpdParams, z) -> np.ndarray:
    """log(1 - H(z)) for the GPD part."""
    y = np.maximum(np.asarray(z, dtype=float), 0.0) / params.sigma
    xi = params.xi
    if xi == 0.0:
        return -y
    # log1p keeps full relative precision as xi -> 0, so no series is needed here
    return -np.log1p(xi * y) / xi


def egpd_cdf(params: EgpdParams, z) -> np.ndarray:
    """F(z) = H(z)**kappa with H the GPD(sigma, xi) cdf."""
    with np.errstate(divide="ignore"):
        log_h = np.log(-np.expm1(_log_gpd_sf(params, z)))
    out = np.exp(params.kappa * log_h)
    return np.where(np.asarray(z) <= 0, 0.0, out)


def egpd_sf(params: EgpdParams, z) -> np.ndarray:
    """1 - F(z), accurate in the upper tail."""
    with np.errstate(divide="ignore"):
        log_h = np.log(-np.expm1(_log_gpd_sf(params, z)))
    out = -np.expm1(params.kappa * log_h)
    return np.where(np.asarray(z) <= 0, 1.0, out)


def egpd_logpdf(params: EgpdParams, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    log_sf = _log_gpd_sf(params, z)
    with np.errstate(divide="ignore"):
        log_h = np.log(-np.expm1(log_sf))
    # GPD density (1/sigma) (1 + xi y)^(-1/xi - 1) = (1/sigma) sf^(1 + xi)
    log_gpd_pdf = -math.log(params.sigma) + (1.0 + params.xi) * log_sf
    with np.errstate(divide="ignore", invalid="ignore"):
        out = math.log(params.kappa) + (params.kappa - 1.0) * log_h + log_gpd_pdf
    return np.where(z > 0, out, -np.inf)


def egpd_pdf(params: EgpdParams, z) -> np.ndarray:
    return np.exp(egpd_logpdf(params, z))


def _normalized_quantile(w, xi: float) -> np.ndarray:
    """GPD quantile at level w for unit scale: ((1 - w)^(-xi) - 1) / xi."""
    big_l = -np.log1p(-np.asarray(w, dtype=float))
    if xi == 0.0:
        return big_l
    return np.expm1(xi * big_l) / xi


def egpd_quantile(params: EgpdParams, p) -> np.ndarray:
    """Inverse of :func:`egpd_cdf`: sigma/xi * ((1 - p**(1/kappa))**(-xi) - 1)."""
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise ValueError("quantile probabilities must lie in (0, 1)")
    w = np.exp(np.log(p) / params.kappa)
    return params.sigma * _normalized_quantile(w, params.xi)


def _quantile_from_sf(params: EgpdParams, sf) -> np.ndarray:
    """Quantile at upper-tail probability ``sf`` (keeps precision near 1)."""
    sf = np.asarray(sf, dtype=float)
    w = np.exp(np.log1p(-sf) / params.kappa)
    return params.sigma * _normalized_quantile(w, params.xi)


# truncated law of Z given Z > u


def truncated_cdf(params: EgpdParams, z, threshold: float) -> np.ndarray:
    s_u = float(egpd_sf(params, threshold))
    z = np.asarray(z, dtype=float)
    out = 1.0 - egpd_sf(params, z) / s_u
    return np.clip(np.where(z <= threshold, 0.0, out), 0.0, 1.0)


def truncated_sf(params: EgpdParams, z, threshold: float) -> np.ndarray:
    s_u = float(egpd_sf(params, threshold))
    z = np.asarray(z, dtype=float)
    return np.where(z <= threshold, 1.0, np.minimum(egpd_sf(params, z) / s_u, 1.0))


def truncated_logpdf(params: EgpdParams, z, threshold: float) -> np.ndarray:
    s_u = float(egpd_sf(params, threshold))
    z = np.asarray(z, dtype=float)
    return np.where(z > threshold, egpd_logpdf(params, z) - math.log(s_u), -np.inf)


def truncated_quantile(params: EgpdParams, p, threshold: float) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p >= 1)):
        raise ValueError("quantile probabilities must lie in [0, 1)")
    s_u = float(egpd_sf(params, threshold))
    return _quantile_from_sf(params, (1.0 - p) * s_u)


def sample_truncated(params: EgpdParams, size, rng: np.random.Generator, threshold: float = 0.0) -> np.ndarray:
    """Draw from the EGPD conditioned on exceeding ``threshold``."""
    v = rng.random(size)
    s_u = float(egpd_sf(params, threshold)) if threshold > 0 else 1.0
    # 1 - v is in (0, 1]; guard against an exact 0 upper-tail probability
    return _quantile_from_sf(params, np.maximum((1.0 - v) * s_u, 1e-300))


def truncated_loglik(params: EgpdParams, sample, threshold: float) -> float:
    return float(np.sum(truncated_logpdf(params, sample, threshold)))


# ---------------------------------------------------------------------------
# theoretical moments


def _gpd_level(params: EgpdParams, threshold: float) -> float:
    """H(threshold), the GPD cdf at the threshold."""
    if threshold <= 0:
        return 0.0
    return float(-np.expm1(_log_gpd_sf(params, threshold)))


def _tail_moment(lower: float, a: float, xi: float) -> float:
    """Integral of q(w) w^(a-1) over [lower, 1], q the unit-scale GPD quantile."""
    if xi >= SMALL_XI:
        return (upper_beta(lower, a, 1.0 - xi) - (1.0 - lower**a) / a) / xi

    def integrand(w):
        big_l = -math.log1p(-w)
        return big_l * (1.0 + 0.5 * xi * big_l) * w ** (a - 1.0)

    value, _ = integrate.quad(integrand, lower, 1.0, limit=200)
    return value


def theoretical_pwm(params: EgpdParams, threshold: float = 0.0) -> tuple[float, float, float]:
    """alpha_i = E[Z F_u(Z)^i | Z > u] for i = 0, 1, 2, F_u the truncated cdf.

    Closed form through tail Beta integrals: with w = H(Z) the truncated
    weight F_u^i expands binomially into powers w**(kappa j).
    """
    kappa = params.kappa
    h = _gpd_level(params, threshold)
    f_u = h**kappa
    s_u = 1.0 - f_u
    # E[Z w^(kappa j); Z > u] for j = 0, 1, 2
    m = [kappa * params.sigma * _tail_moment(h, kappa * (j + 1), params.xi) for j in range(3)]
    a0 = m[0] / s_u
    a1 = (m[1] - f_u * m[0]) / s_u**2
    a2 = (m[2] - 2.0 * f_u * m[1] + f_u * f_u * m[0]) / s_u**3
    return a0, a1, a2


def truncated_mean(params: EgpdParams, threshold: float) -> float:
    return theoretical_pwm(params, threshold)[0]


# ---------------------------------------------------------------------------
# local fit


def _check_sample(sample, threshold: float) -> np.ndarray:
    z = np.asarray(sample, dtype=float).ravel()
    if z.size < MIN_FIT_SIZE:
        raise FitError(f"insufficient data: {z.size} values, need {MIN_FIT_SIZE}")
    if not np.all(np.isfinite(z)):
        raise FitError("sample contains non-finite values")
    if np.any(z <= threshold):
        raise FitError(f"all values must exceed the threshold {threshold}")
    if np.ptp(z) <= 1e-12 * abs(z[0]):
        raise FitError("constant sample")
    return z


def _pwm_residuals(x, target, threshold, xi_fixed=None):
    if xi_fixed is None:
        kappa, sigma, xi = math.exp(x[0]), math.exp(x[1]), float(x[2])
    else:
        kappa, sigma, xi = math.exp(x[0]), math.exp(x[1]), xi_fixed
    try:
        alphas = theoretical_pwm(EgpdParams(kappa, sigma, xi), threshold)
    except (ValueError, ArithmeticError, OverflowError):
        return np.full(len(target), 1e6)
    return np.asarray(alphas[: len(target)]) / target - 1.0


def _sigma_start(target0: float, threshold: float) -> float:
    return max(target0 - 0.5 * threshold, 1e-3 * target0)


def _solve_pwm(target, threshold, starts, xi_fixed=None):
    """Least-squares PWM matching from several starts; best solution wins."""
    lo = [math.log(KAPPA_BOUNDS[0]), math.log(target[0]) - 20.0]
    hi = [math.log(KAPPA_BOUNDS[1]), math.log(target[0]) + 5.0]
    if xi_fixed is None:
        lo.append(XI_BOUNDS[0])
        hi.append(XI_BOUNDS[1])
    best = None
    for x0 in starts:
        x0 = np.clip(np.asarray(x0, dtype=float), np.asarray(lo) + 1e-9, np.asarray(hi) - 1e-9)
        try:
            res = optimize.least_squares(
                _pwm_residuals, x0, bounds=(lo, hi), args=(target, threshold, xi_fixed),
                method="trf", xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=400,
            )
        except (ValueError, FloatingPointError):
            continue
        if best is None or res.cost < best.cost:
            best = res
        if best.cost < 1e-16:
            break
    return best


def _nll(x, z, threshold, xi_fixed=None):
    if xi_fixed is None:
        kappa, sigma, xi = math.exp(x[0]), math.exp(x[1]), float(x[2])
    else:
        kappa, sigma, xi = math.exp(x[0]), math.exp(x[1]), xi_fixed
    try:
        val = -truncated_loglik(EgpdParams(kappa, sigma, xi), z, threshold)
    except (ValueError, FloatingPointError):
        return 1e300
    return val if math.isfinite(val) else 1e300


def _fit_mle(z, threshold, x0, xi_fixed=None):
    scale = float(np.mean(z))
    bounds = [(math.log(KAPPA_BOUNDS[0]), math.log(KAPPA_BOUNDS[1])),
              (math.log(scale) - 20.0, math.log(scale) + 5.0)]
    if xi_fixed is None:
        bounds.append(XI_BOUNDS)
    res = optimize.minimize(_nll, x0, args=(z, threshold, xi_fixed), method="L-BFGS-B", bounds=bounds)
    if not (np.all(np.isfinite(res.x)) and res.fun < 1e299):
        raise FitError(f"likelihood fallback failed: {res.message}")
    return res


# accept a PWM solution when every moment is matched to this relative error
PWM_ACCEPT = 1e-4


def fit_local(sample, threshold: float = 1.0) -> EgpdParams:
    """Fit (kappa, sigma, xi) to wet-day values above ``threshold``.

    Matches the three truncated PWMs by bounded least squares; when the
    moment equations have no solution inside the parameter box the fit
    falls back to maximum likelihood on the same box.
    """
    z = _check_sample(sample, threshold)
    target = np.array(estimate_pwm(z))
    s0 = _sigma_start(target[0], threshold)
    starts = [(0.0, math.log(s0), 0.1), (math.log(2.0), math.log(0.6 * s0), 0.1),
              (math.log(0.5), math.log(1.5 * s0), 0.3)]
    res = _solve_pwm(target, threshold, starts)
    if res is not None and np.max(np.abs(res.fun)) < PWM_ACCEPT:
        x = res.x
        return EgpdParams(math.exp(x[0]), math.exp(x[1]), float(x[2]), method="pwm", iterations=int(res.nfev))
    x0 = res.x if res is not None else np.array(starts[0])
    mle = _fit_mle(z, threshold, x0)
    x = mle.x
    return EgpdParams(math.exp(x[0]), math.exp(x[1]), float(x[2]), method="mle",
                      converged=bool(mle.success), iterations=int(mle.nfev))


def refit_fixed_xi(sample, xi: float, threshold: float = 1.0, start: EgpdParams | None = None,
                   level: Level = Level.SEMIREGIONAL, cluster_id: int | None = None) -> EgpdParams:
    """Re-estimate (kappa, sigma) by matching alpha_0 and alpha_1 with xi frozen."""
    z = _check_sample(sample, threshold)
    target = np.array(estimate_pwm(z))[:2]
    s0 = _sigma_start(target[0], threshold)
    starts = []
    if start is not None:
        starts.append((math.log(start.kappa), math.log(start.sigma)))
    starts += [(0.0, math.log(s0)), (math.log(2.0), math.log(0.6 * s0))]
    res = _solve_pwm(target, threshold, starts, xi_fixed=xi)
    if res is not None and np.max(np.abs(res.fun)) < PWM_ACCEPT:
        x, method, ok, nfev = res.x, "pwm", True, res.nfev
    else:
        x0 = res.x if res is not None else np.array(starts[0])
        mle = _fit_mle(z, threshold, x0, xi_fixed=xi)
        x, method, ok, nfev = mle.x, "mle", bool(mle.success), mle.nfev
    return EgpdParams(math.exp(x[0]), math.exp(x[1]), xi, level=level, cluster_id=cluster_id,
                      method=method, converged=ok, iterations=int(nfev))


# ---------------------------------------------------------------------------
# regionalization


def _cluster_members(partition: Mapping[str, int], fitted: Mapping[str, EgpdParams]) -> dict[int, list[str]]:
    members: dict[int, list[str]] = {}
    for site, cl in partition.items():
        members.setdefault(int(cl), [])
        if site in fitted:
            members[int(cl)].append(site)
    return members


def cluster_means(partition: Mapping[str, int], local: Mapping[str, EgpdParams]) -> dict[int, tuple[float, float]]:
    """Unweighted cluster means of local (kappa, xi) over fitted sites."""
    out = {}
    for cl, sites in sorted(_cluster_members(partition, local).items()):
        if not sites:
            raise FitError(f"cluster {cl} has no fitted sites")
        out[cl] = (float(np.mean([local[s].kappa for s in sites])),
                   float(np.mean([local[s].xi for s in sites])))
    return out


def fit_semiregional(samples: Mapping[str, np.ndarray], partition: Mapping[str, int],
                     local: Mapping[str, EgpdParams], threshold: float = 1.0) -> dict[str, EgpdParams]:
    """Cluster-common xi (mean of local xi), site-specific (kappa, sigma)."""
    means = cluster_means(partition, local)
    out = {}
    for site in sorted(local):
        if site not in partition:
            continue
        cl = int(partition[site])
        xi0 = means[cl][1]
        try:
            out[site] = refit_fixed_xi(samples[site], xi0, threshold, start=local[site], cluster_id=cl)
        except FitError as exc:
            log.warning("semiregional refit failed at %s: %s", site, exc)
    return out


def algorithm_sigma_update(sigma0: float, kappa0: float, xi0: float, mean_excess: float, threshold: float) -> float:
    """One step of the regional scale iteration.

    sigma_new = xi0 m / ((kappa0 / S(u)) * IB(H(u/sigma0), kappa0, 1 - xi0) - 1),
    with S(u) the EGPD survival at u and IB the Beta integral from H(u/sigma0)
    to 1. For xi0 near 0 the same ratio is taken in its xi -> 0 limit.
    """
    params = EgpdParams(kappa0, sigma0, xi0)
    h = _gpd_level(params, threshold)
    s_u = 1.0 - h**kappa0
    if xi0 >= SMALL_XI:
        denom = (kappa0 / s_u) * upper_beta(h, kappa0, 1.0 - xi0) - 1.0
        return xi0 * mean_excess / denom
    return mean_excess * s_u / (kappa0 * _tail_moment(h, kappa0, xi0))


@dataclass
class RegionalModel:
    """Per-cluster (kappa0, xi0) and per-site sigma.

    A site's quantile function is sigma(site) times the cluster-normalized
    quantile function, so it is fully described by these fields.
    """

    shape: dict[int, tuple[float, float]]
    sigma: dict[str, float]
    cluster: dict[str, int]
    threshold: float
    n_wds_mean: dict[str, float] = field(default_factory=dict)
    converged: dict[str, bool] = field(default_factory=dict)
    iterations: dict[str, int] = field(default_factory=dict)

    def params(self, site: str) -> EgpdParams:
        cl = self.cluster[site]
        kappa0, xi0 = self.shape[cl]
        return EgpdParams(kappa0, self.sigma[site], xi0, level=Level.REGIONAL, cluster_id=cl,
                          converged=self.converged.get(site, True), method="regional",
                          iterations=self.iterations.get(site, 0))

    def all_params(self) -> dict[str, EgpdParams]:
        return {s: self.params(s) for s in sorted(self.sigma)}


def iterate_regional_sigma(sigma_start: float, kappa0: float, xi0: float, mean_excess: float,
                           threshold: float = 1.0, eps: float = REGIONAL_EPS,
                           max_iter: int = REGIONAL_MAX_ITER) -> tuple[float, bool, int, list[float]]:
    """Run the fixed-point scale iteration from ``sigma_start``.

    Returns (sigma, converged, iterations, step sizes).
    """
    sigma0 = sigma_start
    steps = []
    for it in range(1, max_iter + 1):
        sigma_new = algorithm_sigma_update(sigma0, kappa0, xi0, mean_excess, threshold)
        if not (math.isfinite(sigma_new) and sigma_new > 0):
            return sigma_start, False, it, steps
        steps.append(abs(sigma_new - sigma0))
        sigma0 = sigma_new
        if steps[-1] < eps:
            return sigma0, True, it, steps
    return sigma_start, False, max_iter, steps


def fit_regional(samples: Mapping[str, np.ndarray], partition: Mapping[str, int],
                 local: Mapping[str, EgpdParams], threshold: float = 1.0, eps: float = REGIONAL_EPS,
                 max_iter: int = REGIONAL_MAX_ITER,
                 n_wds_mean: Mapping[str, float] | None = None) -> RegionalModel:
    """Regional fit: cluster-mean (kappa, xi), then per-site sigma by fixed point.

    Sites whose iteration does not converge keep their local sigma and are
    flagged in ``converged``.
    """
    means = cluster_means(partition, local)
    for cl, (_, xi0) in means.items():
        if xi0 >= 1.0:
            raise FitError(f"cluster {cl}: xi0 = {xi0} >= 1, mean excess diverges")
    model = RegionalModel(shape=means, sigma={}, cluster={}, threshold=threshold,
                          n_wds_mean=dict(n_wds_mean or {}))
    for site in sorted(local):
        if site not in partition:
            continue
        cl = int(partition[site])
        kappa0, xi0 = means[cl]
        m = float(np.mean(samples[site]))
        sigma, ok, n_it, steps = iterate_regional_sigma(local[site].sigma, kappa0, xi0, m, threshold, eps, max_iter)
        if len(steps) > 4 and any(b > a * (1 + 1e-9) for a, b in zip(steps[3:], steps[4:])):
            log.info("regional iteration at %s is not monotone after 3 steps", site)
        if not ok:
            log.warning("regional iteration did not converge at %s; keeping local sigma", site)
        model.sigma[site] = sigma
        model.cluster[site] = cl
        model.converged[site] = ok
        model.iterations[site] = n_it
    return model


# ---------------------------------------------------------------------------
# return levels


def return_level(params: EgpdParams, period_years, n_wds_mean: float, threshold: float = 0.0):
    """Return level for a period in years (season-years).

    The per-wet-day exceedance probability is 1/(T n_wds). With a positive
    threshold the probability refers to the law truncated at the threshold,
    which is how wet days are counted.
    """
    t = np.asarray(period_years, dtype=float)
    if np.any(t < 1):
        raise ValueError("return period must be at least one year")
    if not n_wds_mean > 0:
        raise ValueError("n_wds_mean must be positive")
    tail = 1.0 / (t * n_wds_mean)
    if np.any(tail >= 1):
        raise ValueError("T * n_wds_mean must exceed 1")
    s_u = float(egpd_sf(params, threshold)) if threshold > 0 else 1.0
    out = _quantile_from_sf(params, tail * s_u)
    return float(out) if out.ndim == 0 else out


def with_level(params: EgpdParams, level: Level, cluster_id: int | None = None) -> EgpdParams:
    return replace(params, level=level, cluster_id=cluster_id)


@dataclass
class ReturnLevelField:
    """Return levels of one season, period and model level across sites."""

    season: str
    period: float
    level: Level
    site_ids: list[str]
    values: np.ndarray
    lon: np.ndarray | None = None
    lat: np.ndarray | None = None

    def to_rows(self):
        lon = self.lon if self.lon is not None else np.full(len(self.site_ids), np.nan)
        lat = self.lat if self.lat is not None else np.full(len(self.site_ids), np.nan)
        for i, site in enumerate(self.site_ids):
            yield [site, repr(float(lon[i])), repr(float(lat[i])), self.season, repr(float(self.period)),
                   repr(float(self.values[i])), Level(self.level).value]


def return_level_field(params: Mapping[str, EgpdParams], n_wds_mean: Mapping[str, float], period: float,
                       season: str, level: Level, threshold: float = 1.0,
                       coords: Mapping[str, tuple[float, float]] | None = None) -> ReturnLevelField:
    sites = sorted(params)
    values = np.empty(len(sites))
    for i, s in enumerate(sites):
        if s not in n_wds_mean or not n_wds_mean[s] > 0:
            raise ValueError(f"site {s} lacks a wet-day count")
        values[i] = return_level(params[s], period, n_wds_mean[s], threshold)
    lon = lat = None
    if coords is not None:
        lon = np.array([coords[s][0] for s in sites])
        lat = np.array([coords[s][1] for s in sites])
    return ReturnLevelField(season, float(period), Level(level), sites, values, lon, lat)
