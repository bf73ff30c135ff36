"""k-medoids (PAM) on a scalar feature with Manhattan distance, plus validity indices.

Distances are |x_i - x_j| on the real line and are never materialized as a
matrix. Every quantity PAM needs is a sum of hinge functions
sum_o max(c - p_o, 0) over some point set, which sorted prefix sums evaluate
for all candidates at once. The swap step uses the removal-loss
decomposition of FastPAM: with cached nearest and second-nearest medoid
distances, the change in total cost of swapping medoid m for candidate c
splits into a shared term and a per-medoid term, so one sweep evaluates all
n x k swaps in O(k n log n).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

MAX_SWEEPS = 100
K_RANGE = range(2, 11)


class ClusterError(ValueError):
    pass


class _Hinge:
    """Sums of (c - p)_+ and (p - c)_+ over a fixed point set, for many c at once."""

    def __init__(self, points):
        self.p = np.sort(np.asarray(points, dtype=float))
        self.cum = np.concatenate([[0.0], np.cumsum(self.p)])

    def right(self, c) -> np.ndarray:
        """sum_p max(c - p, 0)"""
        c = np.asarray(c, dtype=float)
        i = np.searchsorted(self.p, c, side="right")
        return c * i - self.cum[i]

    def left(self, c) -> np.ndarray:
        """sum_p max(p - c, 0)"""
        c = np.asarray(c, dtype=float)
        i = np.searchsorted(self.p, c, side="left")
        return (self.cum[-1] - self.cum[i]) - c * (self.p.size - i)

    def abs_sum(self, c) -> np.ndarray:
        """sum_p |c - p|"""
        return self.right(c) + self.left(c)


def _tent_sum(x: np.ndarray, r: np.ndarray, c: np.ndarray) -> np.ndarray:
    """sum_o max(r_o - |c - x_o|, 0) for every c."""
    keep = r > 0
    x, r = x[keep], r[keep]
    if x.size == 0:
        return np.zeros_like(np.asarray(c, dtype=float))
    return _Hinge(x - r).right(c) - 2.0 * _Hinge(x).right(c) + _Hinge(x + r).right(c)


def _nearest(x: np.ndarray, medoids: np.ndarray):
    """Label, nearest and second-nearest distance for every point.

    ``medoids`` must be sorted by site index so argmin ties go to the lowest one.
    """
    d = np.abs(x[:, None] - x[medoids][None, :])
    labels = np.argmin(d, axis=1)
    dnear = d[np.arange(x.size), labels]
    if medoids.size > 1:
        d[np.arange(x.size), labels] = np.inf
        dsec = d.min(axis=1)
    else:
        dsec = np.full(x.size, np.inf)
    return labels, dnear, dsec


def total_cost(x, medoids) -> float:
    x = np.asarray(x, dtype=float)
    medoids = np.sort(np.asarray(medoids, dtype=int))
    return float(np.sum(_nearest(x, medoids)[1]))


def pam_build(x, k: int) -> np.ndarray:
    """Greedy deterministic BUILD; returns medoid indices in selection order.

    The first medoid minimizes the total distance to all points; each next one
    maximizes the reduction of total cost. Ties go to the lowest index.
    """
    x = np.asarray(x, dtype=float)
    if k < 1:
        raise ClusterError("k must be at least 1")
    if not np.all(np.isfinite(x)):
        raise ClusterError("feature values must be finite")
    if np.unique(x).size < k:
        raise ClusterError(f"k = {k} exceeds the {np.unique(x).size} distinct values")
    first = int(np.argmin(_Hinge(x).abs_sum(x)))
    medoids = [first]
    dnear = np.abs(x - x[first])
    for _ in range(1, k):
        gain = _tent_sum(x, dnear, x)
        gain[medoids] = -np.inf
        # never pick a point that duplicates a medoid value
        gain[dnear == 0] = -np.inf
        best = int(np.argmax(gain))
        medoids.append(best)
        dnear = np.minimum(dnear, np.abs(x - x[best]))
    return np.array(medoids, dtype=int)


@dataclass
class Partition:
    """Result of PAM on one season's feature values.

    Cluster labels are 0..k-1 in ascending order of medoid site index.
    """

    k: int
    labels: np.ndarray
    medoids: np.ndarray
    total_cost: float
    silhouettes: np.ndarray
    site_ids: list[str] | None = None
    cost_history: list[float] = field(default_factory=list)
    n_sweeps: int = 0
    posthoc: np.ndarray | None = None

    @property
    def assignment(self) -> dict[str, int]:
        ids = self.site_ids or [str(i) for i in range(self.labels.size)]
        return {s: int(l) for s, l in zip(ids, self.labels)}

    @property
    def medoid_ids(self) -> list[str]:
        ids = self.site_ids or [str(i) for i in range(self.labels.size)]
        return [ids[m] for m in self.medoids]

    def to_csv(self, path: str | Path, omega_field, season: str) -> None:
        is_medoid = np.zeros(self.labels.size, dtype=bool)
        is_medoid[self.medoids] = True
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["site_id", "lon", "lat", "season", "cluster", "silhouette", "is_medoid"])
            for i, sid in enumerate(omega_field.site_ids):
                w.writerow([sid, repr(float(omega_field.lon[i])), repr(float(omega_field.lat[i])), season,
                            int(self.labels[i]), repr(float(self.silhouettes[i])), int(is_medoid[i])])


def _swap_deltas(x: np.ndarray, labels, dnear, dsec, k: int) -> np.ndarray:
    """Change in total cost for every (candidate, medoid slot) swap, shape (n, k)."""
    shared = -_tent_sum(x, dnear, x)
    delta = np.empty((x.size, k))
    for m in range(k):
        g = labels == m
        xs, a, b = x[g], dnear[g], dsec[g]
        # sum over the group of clip(|c - x|, a, b) - a
        delta[:, m] = (_Hinge(xs + a).right(x) + _Hinge(xs - a).left(x)
                       - _Hinge(xs + b).right(x) - _Hinge(xs - b).left(x))
    return delta + shared[:, None]


def pam_swap(x, medoids, max_sweeps: int = MAX_SWEEPS, compute_silhouettes: bool = True) -> Partition:
    """Best-improvement swap phase until no swap strictly lowers total cost."""
    x = np.asarray(x, dtype=float)
    med = np.sort(np.asarray(medoids, dtype=int))
    k = med.size
    if np.unique(x[med]).size != k:
        raise ClusterError("medoids must have distinct values")
    labels, dnear, dsec = _nearest(x, med)
    cost = float(dnear.sum())
    history = [cost]
    sweeps = 0
    if k < x.size and k > 1:
        converged = False
        while sweeps < max_sweeps:
            sweeps += 1
            delta = _swap_deltas(x, labels, dnear, dsec, k)
            delta[med, :] = np.inf
            flat = int(np.argmin(delta))
            c, m = divmod(flat, k)
            tol = 1e-10 * (1.0 + cost)
            if not delta[c, m] < -tol:
                converged = True
                break
            trial = np.sort(np.concatenate([np.delete(med, m), [c]]))
            t_labels, t_dnear, t_dsec = _nearest(x, trial)
            t_cost = float(t_dnear.sum())
            if not t_cost < cost - 0.5 * tol:
                converged = True
                break
            med, labels, dnear, dsec, cost = trial, t_labels, t_dnear, t_dsec, t_cost
            history.append(cost)
        if not converged:
            raise ClusterError(f"swap phase did not converge in {max_sweeps} sweeps (cost history {history[-5:]})")
    elif k == 1 and x.size > 1:
        # the single best medoid is found exactly by BUILD's first step
        best = int(np.argmin(_Hinge(x).abs_sum(x)))
        med = np.array([best])
        labels, dnear, dsec = _nearest(x, med)
        cost = float(dnear.sum())
    sil = silhouette_scores(x, labels) if compute_silhouettes and k > 1 else np.zeros(x.size)
    return Partition(k=k, labels=labels, medoids=med, total_cost=cost, silhouettes=sil,
                     cost_history=history, n_sweeps=sweeps)


def pam(x, k: int, max_sweeps: int = MAX_SWEEPS) -> Partition:
    return pam_swap(x, pam_build(x, k), max_sweeps=max_sweeps)


def _cluster_sums(x: np.ndarray, labels: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """(n, k) sums of distances from each point to each cluster, and cluster sizes."""
    sums = np.empty((x.size, k))
    sizes = np.bincount(labels, minlength=k)
    for c in range(k):
        sums[:, c] = _Hinge(x[labels == c]).abs_sum(x)
    return sums, sizes


def silhouette_scores(x, labels) -> np.ndarray:
    """Silhouette of each point; members of singleton clusters score 0.

    Written as 1 - a/b when a <= b, the (b - a)/max(a, b) form keeps scores
    in [-1, 1] when a point sits closer to a foreign cluster.
    """
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels, dtype=int)
    k = int(labels.max()) + 1
    sums, sizes = _cluster_sums(x, labels, k)
    idx = np.arange(x.size)
    own = sizes[labels]
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(own > 1, sums[idx, labels] / np.maximum(own - 1, 1), 0.0)
        means = sums / sizes[None, :]
    means[idx, labels] = np.inf
    means[:, sizes == 0] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 0, (b - a) / denom, 0.0)
    s[own <= 1] = 0.0
    s[~np.isfinite(b)] = 0.0
    return np.clip(s, -1.0, 1.0)


# ---------------------------------------------------------------------------
# validity indices


def dunn_index(x, labels) -> float:
    """Minimum inter-cluster distance over maximum cluster diameter."""
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    order = np.argsort(x, kind="stable")
    xs, ls = x[order], labels[order]
    # on the line the closest pair from different clusters is adjacent in sorted order
    diff = ls[1:] != ls[:-1]
    sep = float(np.min(np.diff(xs)[diff])) if diff.any() else math.inf
    diam = max(float(np.ptp(x[labels == c])) for c in np.unique(labels))
    return sep / diam if diam > 0 else math.inf


def davies_bouldin_index(x, labels, medoids) -> float:
    x = np.asarray(x, dtype=float)
    centers = x[np.asarray(medoids)]
    k = centers.size
    scatter = np.array([np.mean(np.abs(x[labels == c] - centers[c])) for c in range(k)])
    worst = []
    for i in range(k):
        ratios = [(scatter[i] + scatter[j]) / abs(centers[i] - centers[j]) for j in range(k) if j != i]
        worst.append(max(ratios))
    return float(np.mean(worst))


def xie_beni_index(x, labels, medoids) -> float:
    x = np.asarray(x, dtype=float)
    centers = x[np.asarray(medoids)]
    compact = float(np.sum((x - centers[labels]) ** 2))
    gaps = np.diff(np.sort(centers))
    return compact / (x.size * float(np.min(gaps)) ** 2)


def s_dbw_index(x, labels) -> float:
    """Scattering plus inter-cluster density (Halkidi and Vazirgiannis)."""
    x = np.asarray(x, dtype=float)
    ks = np.unique(labels)
    k = ks.size
    groups = [np.sort(x[labels == c]) for c in ks]
    var_all = float(np.var(x))
    variances = np.array([np.var(g) for g in groups])
    scat = float(np.mean(variances) / var_all) if var_all > 0 else 0.0
    stdev = math.sqrt(float(np.sum(variances))) / k
    centers = np.array([g.mean() for g in groups])

    def density(point, gi, gj):
        n = 0
        for g in (groups[gi], groups[gj]):
            n += int(np.searchsorted(g, point + stdev, side="right") - np.searchsorted(g, point - stdev, side="left"))
        return n

    total = 0.0
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            mid = 0.5 * (centers[i] + centers[j])
            top = density(mid, i, j)
            bottom = max(density(centers[i], i, j), density(centers[j], i, j))
            if bottom > 0:
                total += top / bottom
    return scat + total / (k * (k - 1))


@dataclass
class ValidityReport:
    rows: list[dict]
    partitions: dict[int, Partition] = field(default_factory=dict)

    @property
    def k_values(self) -> list[int]:
        return [r["k"] for r in self.rows]

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def to_csv(self, path: str | Path) -> None:
        cols = ["k", "mean_silhouette", "dunn", "davies_bouldin", "xie_beni", "s_dbw"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow([r["k"]] + [repr(float(r[c])) for c in cols[1:]])


def validity_indices(x, k_range=K_RANGE, max_sweeps: int = MAX_SWEEPS) -> ValidityReport:
    """Run PAM for every k and report the five validity indices.

    Greedy BUILD is nested in k, so one BUILD to max(k_range) seeds every run.
    A k that cannot be clustered is reported with nan indices and a flag.
    """
    x = np.asarray(x, dtype=float)
    ks = sorted(set(int(k) for k in k_range))
    if not ks or ks[0] < 2 or ks[-1] > 10:
        raise ClusterError("k range must lie within 2..10")
    distinct = np.unique(x).size
    build = pam_build(x, min(ks[-1], distinct))
    rows, parts = [], {}
    for k in ks:
        row = {"k": k, "flag": ""}
        if k > build.size:
            row.update(mean_silhouette=math.nan, dunn=math.nan, davies_bouldin=math.nan,
                       xie_beni=math.nan, s_dbw=math.nan, flag="too few distinct values")
            rows.append(row)
            continue
        part = pam_swap(x, build[:k], max_sweeps=max_sweeps)
        if np.any(np.bincount(part.labels, minlength=k) == 0):
            row.update(mean_silhouette=math.nan, dunn=math.nan, davies_bouldin=math.nan,
                       xie_beni=math.nan, s_dbw=math.nan, flag="empty cluster")
        else:
            row.update(
                mean_silhouette=float(np.mean(part.silhouettes)),
                dunn=dunn_index(x, part.labels),
                davies_bouldin=davies_bouldin_index(x, part.labels, part.medoids),
                xie_beni=xie_beni_index(x, part.labels, part.medoids),
                s_dbw=s_dbw_index(x, part.labels),
            )
        rows.append(row)
        parts[k] = part
    return ValidityReport(rows=rows, partitions=parts)


# ---------------------------------------------------------------------------
# fields with site identities


def _attach_posthoc(part_core: Partition, omega_field, valid: np.ndarray) -> Partition:
    """Lift a partition of the valid sites to the whole field.

    Degenerate sites join the cluster of the geographically nearest valid site.
    """
    n = len(omega_field)
    idx_valid = np.flatnonzero(valid)
    labels = np.empty(n, dtype=int)
    sil = np.zeros(n)
    labels[idx_valid] = part_core.labels
    sil[idx_valid] = part_core.silhouettes
    bad = np.flatnonzero(~valid)
    if bad.size:
        lon_v, lat_v = omega_field.lon[idx_valid], omega_field.lat[idx_valid]
        for i in bad:
            d2 = (lon_v - omega_field.lon[i]) ** 2 + (lat_v - omega_field.lat[i]) ** 2
            labels[i] = part_core.labels[int(np.argmin(d2))]
    return Partition(k=part_core.k, labels=labels, medoids=idx_valid[part_core.medoids],
                     total_cost=part_core.total_cost, silhouettes=sil,
                     site_ids=list(omega_field.site_ids), cost_history=part_core.cost_history,
                     n_sweeps=part_core.n_sweeps, posthoc=~valid)


def cluster_field(omega_field, k: int, max_sweeps: int = MAX_SWEEPS) -> Partition:
    """PAM on the non-degenerate sites of an OmegaField; degenerate ones attached afterwards."""
    valid = ~omega_field.degenerate
    if valid.sum() < k:
        raise ClusterError(f"only {int(valid.sum())} non-degenerate sites for k = {k}")
    core = pam(omega_field.omega[valid], k, max_sweeps=max_sweeps)
    return _attach_posthoc(core, omega_field, valid)


def scan_field(omega_field, k_range=K_RANGE, max_sweeps: int = MAX_SWEEPS) -> tuple[ValidityReport, dict[int, Partition]]:
    valid = ~omega_field.degenerate
    report = validity_indices(omega_field.omega[valid], k_range, max_sweeps=max_sweeps)
    parts = {k: _attach_posthoc(p, omega_field, valid) for k, p in report.partitions.items()}
    return report, parts
