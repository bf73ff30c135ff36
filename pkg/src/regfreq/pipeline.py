"""Season-level orchestration shared by the CLI, scripts and acceptance tests."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import egpd
from .cluster import Partition, cluster_field, scan_field
from .egpd import EgpdParams, FitError, Level, RegionalModel
from .evaluate import GofReport, ModelScore, goodness_of_fit, model_score, spatial_subsample
from .ingest import SeasonalWetSample, seasonal_wet_sample
from .pwm import OmegaField

log = logging.getLogger(__name__)


def wet_samples(sites, season: str, threshold: float = 1.0) -> dict[str, SeasonalWetSample]:
    return {s.site_id: seasonal_wet_sample(s, season, threshold) for s in sites}


def omega_field(samples: dict[str, SeasonalWetSample], season: str) -> OmegaField:
    return OmegaField.from_samples(samples.values(), season)


def cluster_season(samples: dict[str, SeasonalWetSample], season: str, k):
    """Partition for an explicit k, or (ValidityReport, partitions by k) when k == 'scan'."""
    field_ = omega_field(samples, season)
    if k == "scan":
        return field_, scan_field(field_)
    return field_, cluster_field(field_, int(k))


def _local_job(args):
    site, values, threshold = args
    try:
        return site, egpd.fit_local(values, threshold), None
    except (FitError, ValueError, ArithmeticError) as exc:
        return site, None, str(exc)


def _semi_job(args):
    site, values, xi0, threshold, start, cl = args
    try:
        return site, egpd.refit_fixed_xi(values, xi0, threshold, start=start, cluster_id=cl), None
    except (FitError, ValueError, ArithmeticError) as exc:
        return site, None, str(exc)


def _run(job, items, threads: int):
    if threads <= 1 or len(items) < 2:
        return [job(it) for it in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(job, items, chunksize=max(1, len(items) // (8 * threads))))


@dataclass
class FitResult:
    season: str
    threshold: float
    partition: dict[str, int]
    local: dict[str, EgpdParams] = field(default_factory=dict)
    semiregional: dict[str, EgpdParams] = field(default_factory=dict)
    regional: RegionalModel | None = None
    unfitted: list[dict] = field(default_factory=list)
    levels: tuple[Level, ...] = (Level.LOCAL, Level.SEMIREGIONAL, Level.REGIONAL)

    def params(self, level: Level | str) -> dict[str, EgpdParams]:
        level = Level(level)
        if level is Level.LOCAL:
            return {s: egpd.with_level(p, Level.LOCAL, self.partition.get(s)) for s, p in self.local.items()}
        if level is Level.SEMIREGIONAL:
            return self.semiregional
        return self.regional.all_params() if self.regional is not None else {}

    @property
    def n_clusters(self) -> int:
        return len(set(self.partition.values()))


def fit_season(samples: dict[str, SeasonalWetSample], partition: dict[str, int], season: str,
               levels=(Level.LOCAL, Level.SEMIREGIONAL, Level.REGIONAL), threshold: float = 1.0,
               threads: int = 1) -> FitResult:
    """Fit the requested model levels on the FIT third of each site's wet days.

    Local fits are always computed because both regional levels start from them.
    """
    levels = tuple(Level(l) for l in levels)
    res = FitResult(season, threshold, dict(partition), levels=levels)
    fit_values = {}
    for site, smp in samples.items():
        if not smp.sufficient:
            res.unfitted.append({"site_id": site, "level": "ALL", "reason": "insufficient data"})
        else:
            fit_values[site] = smp.fit
    for site, params, err in _run(_local_job, [(s, v, threshold) for s, v in fit_values.items()], threads):
        if params is None:
            res.unfitted.append({"site_id": site, "level": Level.LOCAL.value, "reason": err})
        else:
            res.local[site] = params
    needs_partition = Level.SEMIREGIONAL in levels or Level.REGIONAL in levels
    if not needs_partition:
        return res
    in_clusters = {s: c for s, c in partition.items() if s in res.local}
    means = egpd.cluster_means(partition, res.local)
    if Level.SEMIREGIONAL in levels:
        items = [(s, fit_values[s], means[c][1], threshold, res.local[s], c) for s, c in sorted(in_clusters.items())]
        for site, params, err in _run(_semi_job, items, threads):
            if params is None:
                res.unfitted.append({"site_id": site, "level": Level.SEMIREGIONAL.value, "reason": err})
            else:
                res.semiregional[site] = params
    if Level.REGIONAL in levels:
        n_wds = {s: samples[s].n_wds_mean for s in in_clusters}
        res.regional = egpd.fit_regional(fit_values, in_clusters, res.local, threshold, n_wds_mean=n_wds)
        for site, ok in sorted(res.regional.converged.items()):
            if not ok:
                res.unfitted.append({"site_id": site, "level": Level.REGIONAL.value,
                                     "reason": "scale iteration did not converge; local sigma kept"})
    return res


def return_levels(fit: FitResult, samples: dict[str, SeasonalWetSample], periods, levels=None):
    out = {}
    coords = {s: (smp.lon, smp.lat) for s, smp in samples.items()}
    n_wds = {s: smp.n_wds_mean for s, smp in samples.items()}
    for level in levels or fit.levels:
        params = fit.params(level)
        for t in periods:
            out[(Level(level), float(t))] = egpd.return_level_field(params, n_wds, t, fit.season, level,
                                                                   fit.threshold, coords)
    return out


def validate_season(params_by_level: dict, samples: dict[str, SeasonalWetSample], season: str, threshold: float,
                    n_clusters: int, rng: np.random.Generator, fraction: float = 1 / 8, seed: int = 0,
                    silhouettes: dict | None = None, n_sim: int = 999,
                    report: GofReport | None = None) -> tuple[GofReport, list[ModelScore]]:
    """AD tests on a seeded spatial subsample plus in-sample AIC per level.

    ``params_by_level`` maps each Level to its site -> EgpdParams dict.
    """
    report = report or GofReport(seed=seed, fraction=fraction)
    chosen = spatial_subsample(list(samples), fraction, seed)
    holdouts = {s: samples[s].test for s in chosen}
    elevation = {s: samples[s].elevation for s in chosen}
    scores = []
    fit_values = {s: smp.fit for s, smp in samples.items()}
    for level, params in params_by_level.items():
        goodness_of_fit(season, level, params, holdouts, threshold, chosen, rng, report,
                        elevation=elevation, silhouettes=silhouettes, n_sim=n_sim)
        scores.append(model_score(season, level, params, fit_values, threshold, n_clusters))
    return report, scores


def validate_fit(fit: FitResult, samples, rng, **kwargs):
    params = {level: fit.params(level) for level in fit.levels}
    return validate_season(params, samples, fit.season, fit.threshold, fit.n_clusters, rng, **kwargs)


def markers(partition: Partition) -> list[dict]:
    """Medoid plus highest- and lowest-silhouette site of each cluster."""
    rows = []
    ids = partition.site_ids
    for c in range(partition.k):
        members = np.flatnonzero(partition.labels == c)
        if partition.posthoc is not None:
            members = members[~partition.posthoc[members]]
        if members.size == 0:
            continue
        sil = partition.silhouettes[members]
        rows.append({"site_id": ids[partition.medoids[c]], "cluster": c, "marker": "medoid"})
        rows.append({"site_id": ids[members[int(np.argmax(sil))]], "cluster": c, "marker": "max_silhouette"})
        rows.append({"site_id": ids[members[int(np.argmin(sil))]], "cluster": c, "marker": "min_silhouette"})
    return rows
