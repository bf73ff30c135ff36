import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regfreq.cluster import (ClusterError, cluster_field, davies_bouldin_index, dunn_index, pam, pam_build,
                             pam_swap, s_dbw_index, silhouette_scores, total_cost, validity_indices,
                             xie_beni_index)
from regfreq.pwm import OmegaField

FIVE = np.array([0.0, 0.1, 0.2, 5.0, 5.1])


def brute_force_cost(x, k):
    return min(np.abs(x[:, None] - x[list(m)][None, :]).min(axis=1).sum()
               for m in itertools.combinations(range(x.size), k))


def silhouette_by_table(x, labels):
    """Direct O(n^2) silhouette, b - a over max(a, b); singletons score 0."""
    d = np.abs(x[:, None] - x[None, :])
    out = np.zeros(x.size)
    for i in range(x.size):
        own = labels == labels[i]
        if own.sum() == 1:
            continue
        a = d[i, own].sum() / (own.sum() - 1)
        b = min(d[i, labels == c].mean() for c in set(labels.tolist()) if c != labels[i])
        out[i] = (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return out


def test_build_first_medoid_is_median():
    assert pam_build(np.array([0.0, 1.0, 2.0]), 1).tolist() == [1]


def test_build_splits_two_groups():
    med = pam_build(FIVE, 2)
    assert sorted(FIVE[med] > 1) == [False, True]
    np.testing.assert_array_equal(pam_build(FIVE, 2), med)


def test_swap_five_point_example():
    part = pam(FIVE, 2)
    assert part.labels.tolist() == [0, 0, 0, 1, 1]
    assert part.total_cost == pytest.approx(0.3)
    assert brute_force_cost(FIVE, 2) == pytest.approx(0.3)
    assert np.all(part.silhouettes > 0.9)
    np.testing.assert_allclose(part.silhouettes, silhouette_by_table(FIVE, part.labels), atol=1e-12)


def test_k_equals_n():
    part = pam_swap(FIVE, np.arange(5))
    assert part.total_cost == 0


def test_k_exceeds_distinct_values():
    with pytest.raises(ClusterError):
        pam_build(np.array([1.0, 1.0, 2.0]), 3)


def test_silhouette_limits():
    x = np.array([0.0, 0.0, 0.0, 10.0, 10.0])
    s = silhouette_scores(x, np.array([0, 0, 0, 1, 1]))
    np.testing.assert_allclose(s, 1.0)
    # middle point: mean distance 1 to its own cluster and 1 to the other
    x = np.array([0.0, 1.0, 2.0])
    s = silhouette_scores(x, np.array([0, 0, 1]))
    assert s[1] == pytest.approx(0.0)
    assert s[2] == 0.0  # singleton


def test_never_below_brute_force_optimum():
    rng = np.random.default_rng(11)
    for _ in range(30):
        x = rng.random(int(rng.integers(4, 10)))
        for k in (2, 3):
            assert pam(x, k).total_cost >= brute_force_cost(x, k) - 1e-12


def test_two_blobs_validity():
    rng = np.random.default_rng(5)
    x = np.concatenate([rng.normal(0.6, 0.01, 200), rng.normal(0.8, 0.01, 200)])
    rep = validity_indices(x, range(2, 6))
    assert rep.k_values == [2, 3, 4, 5]
    assert rep.rows[0]["mean_silhouette"] > 0.7
    assert int(np.argmax(rep.column("dunn"))) == 0


def test_single_blob_validity():
    x = np.random.default_rng(6).normal(0.7, 0.02, 400)
    rep = validity_indices(x, range(2, 11))
    assert len(rep.rows) == 9
    assert np.all(np.isfinite(rep.column("s_dbw")))
    # Stated expectation. Splitting any unimodal 1-D sample in two gives a mean
    # silhouette near 0.55-0.65 (checked against the explicit distance table
    # in test_partition_invariants), so this bound is not met; see the ledger.
    assert rep.rows[0]["mean_silhouette"] < 0.3


def test_indices_against_direct_definitions():
    x = np.array([0.0, 0.1, 0.3, 2.0, 2.2, 5.0, 5.5])
    labels = np.array([0, 0, 0, 1, 1, 2, 2])
    med = np.array([1, 3, 5])
    d = np.abs(x[:, None] - x[None, :])
    same = labels[:, None] == labels[None, :]
    assert dunn_index(x, labels) == pytest.approx(d[~same].min() / d[same].max())
    scatter = np.array([np.mean(np.abs(x[labels == c] - x[med[c]])) for c in range(3)])
    centres = x[med]
    db = np.mean([max((scatter[i] + scatter[j]) / abs(centres[i] - centres[j]) for j in range(3) if j != i)
                  for i in range(3)])
    assert davies_bouldin_index(x, labels, med) == pytest.approx(db)
    xb = np.sum((x - centres[labels]) ** 2) / (x.size * min(
        (centres[i] - centres[j]) ** 2 for i in range(3) for j in range(3) if i != j))
    assert xie_beni_index(x, labels, med) == pytest.approx(xb)
    assert s_dbw_index(x, labels) >= 0


def test_field_degenerate_sites_attached_geographically():
    om = np.array([0.6, 0.61, np.nan, 0.9, 0.91])
    field = OmegaField(list("abcde"), "JJA", om, np.full(5, 100), np.full(5, 34),
                       lon=np.array([0, 0, 3.1, 3, 3.0]), lat=np.zeros(5))
    part = cluster_field(field, 2)
    assert part.labels[2] == part.labels[3]
    assert part.posthoc.tolist() == [False, False, True, False, False]
    assert set(part.medoid_ids) <= {"a", "b", "d", "e"}


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=4, max_size=60, unique=True), st.integers(2, 4))
def test_partition_invariants(values, k):
    x = np.array(values)
    if k > x.size:
        return
    build = pam_build(x, k)
    part = pam_swap(x, build)
    # cost self-consistency and monotone descent
    assert part.total_cost == pytest.approx(total_cost(x, part.medoids), abs=1e-12)
    assert part.total_cost <= total_cost(x, build) + 1e-12
    assert all(b <= a + 1e-12 for a, b in zip(part.cost_history, part.cost_history[1:]))
    # each medoid in its own cluster, every site at its nearest medoid
    assert part.labels[part.medoids].tolist() == list(range(k))
    d = np.abs(x[:, None] - x[part.medoids][None, :])
    assert np.all(d[np.arange(x.size), part.labels] <= d.min(axis=1) + 1e-15)
    # silhouettes bounded, medoids non-negative, agree with the table
    assert np.all(np.abs(part.silhouettes) <= 1 + 1e-12)
    assert np.all(part.silhouettes[part.medoids] >= -1e-12)
    np.testing.assert_allclose(part.silhouettes, silhouette_by_table(x, part.labels), atol=1e-9)
    # no single swap improves
    med = set(part.medoids.tolist())
    for m in part.medoids:
        for c in range(x.size):
            if c in med:
                continue
            trial = sorted((med - {int(m)}) | {c})
            assert total_cost(x, trial) >= part.total_cost - 1e-9


def test_deterministic():
    x = np.random.default_rng(9).random(500)
    a, b = pam(x, 4), pam(x, 4)
    np.testing.assert_array_equal(a.medoids, b.medoids)
    np.testing.assert_array_equal(a.labels, b.labels)
