"""Goodness of fit and model comparison for fitted EGPD models."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .egpd import EgpdParams, Level, egpd_sf, truncated_logpdf, truncated_quantile

MIN_HOLDOUT = 20
N_SIMULATIONS = 999
SUBSAMPLE_FRACTION = 1.0 / 8.0


class EvaluationError(ValueError):
    pass


def ad_statistic(u) -> float:
    """Anderson-Darling A^2 of values that should be uniform on (0, 1)."""
    u = np.sort(np.asarray(u, dtype=float))
    return _ad_from_logs(np.log(u), np.log1p(-u))


def _ad_from_logs(log_cdf_sorted: np.ndarray, log_sf_sorted: np.ndarray) -> float:
    n = log_cdf_sorted.size
    i = np.arange(1, n + 1)
    return float(-n - np.sum((2 * i - 1) * (log_cdf_sorted + log_sf_sorted[::-1])) / n)


def ad_statistic_fitted(params: EgpdParams, holdout, threshold: float) -> float:
    """A^2 of holdout values against the fitted law truncated at ``threshold``.

    Both tails are evaluated in log space from the survival function, which
    keeps the statistic accurate for extreme holdout values.
    """
    z = np.sort(np.asarray(holdout, dtype=float))
    s_u = float(egpd_sf(params, threshold)) if threshold > 0 else 1.0
    sf = np.clip(egpd_sf(params, z) / s_u, 1e-300, 1.0)
    log_sf = np.log(sf)
    log_cdf = np.log(np.clip(-np.expm1(log_sf), 1e-300, 1.0))
    return _ad_from_logs(log_cdf, log_sf)


@dataclass
class AdResult:
    statistic: float
    p_value: float
    n: int

    @property
    def reject_5pct(self) -> bool:
        return self.p_value < 0.05


def anderson_darling_test(params: EgpdParams, holdout, threshold: float = 1.0,
                          n_sim: int = N_SIMULATIONS, rng: np.random.Generator | None = None) -> AdResult:
    """One-sample AD test of a holdout against a fitted truncated EGPD.

    The p-value is the rank of the observed A^2 among ``n_sim`` samples of
    the same size simulated from the fitted law. Parameters were fitted on
    disjoint data and stay fixed under the null, so each simulated sample is
    drawn by pushing uniforms through the fitted quantile function; the
    statistic of such a sample is the statistic of the uniforms themselves.
    """
    z = np.asarray(holdout, dtype=float)
    if z.size < MIN_HOLDOUT:
        raise EvaluationError(f"holdout of {z.size} values is below the minimum {MIN_HOLDOUT}")
    rng = rng or np.random.default_rng()
    stat = ad_statistic_fitted(params, z, threshold)
    u = np.sort(rng.random((n_sim, z.size)), axis=1)
    u = np.clip(u, 1e-300, 1.0 - 1e-16)
    i = np.arange(1, z.size + 1)
    sims = -z.size - np.sum((2 * i - 1) * (np.log(u) + np.log1p(-u[:, ::-1])), axis=1) / z.size
    p = (1.0 + np.count_nonzero(sims >= stat)) / (n_sim + 1.0)
    return AdResult(stat, float(p), int(z.size))


def spatial_subsample(site_ids, fraction: float = SUBSAMPLE_FRACTION, seed: int = 0) -> list[str]:
    """Seeded uniform choice of ceil(fraction * n) sites, independent of input order."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    ids = sorted(set(site_ids))
    m = math.ceil(fraction * len(ids) - 1e-9)
    if m >= len(ids):
        return ids
    pick = np.random.default_rng(seed).choice(len(ids), size=m, replace=False)
    return sorted(ids[i] for i in pick)


def aic(log_likelihood: float, n_params: int) -> float:
    if not (math.isfinite(log_likelihood) and math.isfinite(n_params)):
        raise ValueError("AIC needs finite inputs")
    return 2.0 * n_params - 2.0 * log_likelihood


def parameter_count(level: Level | str, n_sites: int, n_clusters: int) -> int:
    level = Level(level)
    if level is Level.LOCAL:
        return 3 * n_sites
    if level is Level.SEMIREGIONAL:
        return 2 * n_sites + n_clusters
    return n_sites + 2 * n_clusters


@dataclass
class ModelScore:
    season: str
    level: Level
    log_likelihood: float
    n_sites: int
    n_clusters: int

    @property
    def n_params(self) -> int:
        return parameter_count(self.level, self.n_sites, self.n_clusters)

    @property
    def aic(self) -> float:
        return aic(self.log_likelihood, self.n_params)


def model_score(season: str, level: Level | str, params: dict[str, EgpdParams], samples: dict[str, np.ndarray],
                threshold: float, n_clusters: int) -> ModelScore:
    """Total in-sample log-likelihood over sites, summed in site-id order."""
    ll = 0.0
    for site in sorted(params):
        ll += float(np.sum(truncated_logpdf(params[site], samples[site], threshold)))
    return ModelScore(season, Level(level), ll, len(params), n_clusters)


def qq_data(params: EgpdParams, holdout, threshold: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Empirical order statistics and model quantiles at plotting positions (j - 0.5)/n."""
    z = np.sort(np.asarray(holdout, dtype=float))
    if z.size == 0:
        raise EvaluationError("empty holdout")
    p = (np.arange(1, z.size + 1) - 0.5) / z.size
    return z, truncated_quantile(params, p, threshold)


def write_qq_csv(path: str | Path, site_id: str, season: str, level: str, empirical, model) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["site_id", "season", "level", "empirical_mm", "model_mm"])
        for e, m in zip(empirical, model):
            w.writerow([site_id, season, level, repr(float(e)), repr(float(m))])


def altitude_band(elevation: float | None) -> str:
    if elevation is None or not math.isfinite(elevation):
        return "unknown"
    return "below_1000m" if elevation < 1000 else "above_1000m"


def silhouette_band(silhouette: float | None) -> str:
    if silhouette is None or not math.isfinite(silhouette):
        return "unknown"
    return "low" if silhouette < 0.2 else "high"


@dataclass
class GofReport:
    rows: list[dict] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)
    seed: int = 0
    fraction: float = SUBSAMPLE_FRACTION

    def nonrejection_rates(self, by: str | None = None) -> dict:
        """Share of tested sites not rejected at 5%, per (season, level[, grouping])."""
        acc = defaultdict(lambda: [0, 0])
        for r in self.rows:
            key = (r["season"], r["level"]) if by is None else (r["season"], r["level"], r[by])
            acc[key][0] += not r["reject_5pct"]
            acc[key][1] += 1
        return {key: ok / n for key, (ok, n) in sorted(acc.items())}

    def summary(self) -> dict:
        table: dict[str, dict[str, float]] = {}
        for (season, level), rate in self.nonrejection_rates().items():
            table.setdefault(season, {})[level] = rate
        return {"nonrejection_rate": table, "seed": self.seed, "fraction": self.fraction,
                "n_tested": len(self.rows), "n_skipped": len(self.skipped), "holdout": "TEST third"}

    def to_csv(self, path: str | Path) -> None:
        cols = ["site_id", "season", "level", "ad_stat", "p_value", "reject_5pct", "altitude_band", "silhouette_band"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow([r["site_id"], r["season"], r["level"], repr(r["ad_stat"]), repr(r["p_value"]),
                            int(r["reject_5pct"]), r["altitude_band"], r["silhouette_band"]])

    def write_summary(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True))


def goodness_of_fit(season: str, level: Level | str, params: dict[str, EgpdParams], holdouts: dict[str, np.ndarray],
                    threshold: float, sites: list[str], rng: np.random.Generator, report: GofReport,
                    elevation: dict | None = None, silhouettes: dict | None = None,
                    n_sim: int = N_SIMULATIONS) -> GofReport:
    """Test each selected site and append the rows to ``report``."""
    level = Level(level).value
    for site in sorted(sites):
        if site not in params:
            report.skipped.append({"site_id": site, "season": season, "level": level, "reason": "unfitted"})
            continue
        try:
            res = anderson_darling_test(params[site], holdouts[site], threshold, n_sim=n_sim, rng=rng)
        except EvaluationError as exc:
            report.skipped.append({"site_id": site, "season": season, "level": level, "reason": str(exc)})
            continue
        report.rows.append({
            "site_id": site, "season": season, "level": level, "ad_stat": res.statistic,
            "p_value": res.p_value, "reject_5pct": res.reject_5pct,
            "altitude_band": altitude_band((elevation or {}).get(site)),
            "silhouette_band": silhouette_band((silhouettes or {}).get(site)),
        })
    return report


def return_level_diff(field_a, field_b) -> dict:
    """Per-site relative difference (a - b)/b and its summary."""
    if field_a.site_ids != field_b.site_ids:
        raise EvaluationError("return-level fields cover different sites")
    if field_a.season != field_b.season or field_a.period != field_b.period:
        raise EvaluationError("return-level fields differ in season or return period")
    a = np.asarray(field_a.values, dtype=float)
    b = np.asarray(field_b.values, dtype=float)
    rel = (a - b) / b
    ok = np.isfinite(rel)
    return {
        "site_ids": list(field_a.site_ids),
        "rel_diff": rel,
        "fraction_within_10pct": float(np.mean(np.abs(rel[ok]) < 0.10)) if ok.any() else math.nan,
        "mean_abs_rel_diff": float(np.mean(np.abs(rel[ok]))) if ok.any() else math.nan,
    }
