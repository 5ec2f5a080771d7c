#!/usr/bin/env python3
"""
DHS validation tests: displacement density, posterior location draws,
voting and map scoring against survey clusters.
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import chisquare

# Add the repository root to the path
sys.path.insert(0, str(Path(__file__).parent))

from src.core.dhs import (NON_HS, RURAL, URBAN, DhsCluster, NonSettlementPoint, PerturbationModel,
                          SettlementIndex, classify_draws, displacement_weight, draw_classes, evaluate_maps,
                          hur_from_landcover, hur_from_smod, impute_locations, load_clusters,
                          save_clusters, synthesize_clusters, synthesize_nonhs_points, vote)
from src.core.errors import ConfigError, CoverageError, DataError, EmptyInputError, NoSettlementError
from src.core.raster import GeoTransform, LabelRaster

PIXEL = 100.0
SIZE = 200  # 20 km square
SMALL_PM = PerturbationModel(urban_rmax=300.0, rural_rmax=500.0, rural_far_rmax=800.0)


def _map(values) -> LabelRaster:
    return LabelRaster(np.asarray(values), GeoTransform.north_up(0.0, SIZE * PIXEL, PIXEL), 3)


def _regions() -> LabelRaster:
    """Urban in columns 0-49, rural in 100-149, non-settlement elsewhere."""
    v = np.full((SIZE, SIZE), NON_HS)
    v[:, 0:50] = URBAN
    v[:, 100:150] = RURAL
    return _map(v)


def _centre(col: int, row: int):
    return (col + 0.5) * PIXEL, SIZE * PIXEL - (row + 0.5) * PIXEL


def test_displacement_density():
    pm = PerturbationModel()
    assert displacement_weight(100.0, "urban", pm) == pytest.approx(1 / (2 * math.pi * 100 * 2000))
    assert displacement_weight(2500.0, "urban", pm) == 0.0
    # below the floor the density is flat
    assert displacement_weight(0.0, "urban", pm) == displacement_weight(5.0, "urban", pm)
    rural = displacement_weight(np.array([1000.0, 7000.0]), "rural", pm)
    assert rural[0] == pytest.approx(0.99 / (2 * math.pi * 1000 * 5000) + 0.01 / (2 * math.pi * 1000 * 10000))
    assert rural[1] == pytest.approx(0.01 / (2 * math.pi * 7000 * 10000))
    with pytest.raises(DataError):
        displacement_weight(-1.0, "urban", pm)
    with pytest.raises(DataError):
        displacement_weight(1.0, "suburban", pm)
    with pytest.raises(ConfigError):
        PerturbationModel(urban_rmax=6000.0)


def test_draws_are_proportional_to_inverse_distance():
    v = np.full((50, 50), NON_HS)
    v[25, 30] = URBAN  # 500 m east of the observed point
    v[25, 35] = URBAN  # 1000 m east
    prior = LabelRaster(v, GeoTransform.north_up(0.0, 5000.0, PIXEL), 3)
    x, y = 25.5 * PIXEL, 5000.0 - 25.5 * PIXEL
    n = 10_000
    result = impute_locations(DhsCluster("c1", x, y, "urban"), prior, PerturbationModel(), n=n, seed=17)
    assert result.candidate_count == 2
    near = int((result.draw_pixels[:, 1] == 30).sum())
    far = int((result.draw_pixels[:, 1] == 35).sum())
    assert near + far == n
    assert chisquare([near, far], [n * 2 / 3, n / 3]).pvalue > 0.01


def test_draws_are_seeded_per_cluster():
    prior = _regions()
    x, y = _centre(25, 100)
    c = DhsCluster("k", x, y, "urban")
    a = impute_locations(c, prior, SMALL_PM, n=50, seed=3)
    b = impute_locations(c, prior, SMALL_PM, n=50, seed=3)
    assert np.array_equal(a.draws, b.draws)
    other = impute_locations(DhsCluster("k2", x, y, "urban"), prior, SMALL_PM, n=50, seed=3)
    assert not np.array_equal(a.draw_pixels, other.draw_pixels)


def test_impute_errors():
    prior = _regions()
    with pytest.raises(CoverageError):
        impute_locations(DhsCluster("out", -500.0, 100.0, "urban"), prior, SMALL_PM)
    x, y = _centre(75, 100)
    with pytest.raises(NoSettlementError):
        impute_locations(DhsCluster("far", x, y, "urban"), prior, SMALL_PM)
    with pytest.raises(ConfigError):
        impute_locations(DhsCluster("n0", *_centre(25, 100), "urban"), prior, SMALL_PM, n=0)


def test_vote_and_nodata_draws():
    assert vote(np.array([2, 2, 1]), 0, "a") == 2
    tied = {vote(np.array([1, 2]), seed, "a") for seed in range(40)}
    assert tied == {1, 2}
    assert vote(np.array([1, 2]), 7, "a") == vote(np.array([1, 2]), 7, "a")

    v = np.full((SIZE, SIZE), URBAN)
    v[:, 20:40] = -1
    holes = _map(v)
    result = impute_locations(DhsCluster("h", *_centre(30, 50), "urban"), _regions(), SMALL_PM, n=30, seed=1)
    assert (draw_classes(holes, result) == NON_HS).all()
    assert classify_draws(holes, result, seed=1) == NON_HS
    assert classify_draws(_regions(), result, seed=1) == URBAN


def test_oracle_map_scores_perfectly():
    truth_map = _regions()
    rng = np.random.default_rng(5)
    clusters = []
    for i in range(30):
        clusters.append(DhsCluster(f"u{i}", *_centre(int(rng.integers(15, 35)), int(rng.integers(20, 180))), "urban",
                                   country="AA"))
        clusters.append(DhsCluster(f"r{i}", *_centre(int(rng.integers(115, 135)), int(rng.integers(20, 180))), "rural",
                                   country="BB"))
    points = [NonSettlementPoint(f"n{i}", *_centre(75, 10 + 5 * i), "CC") for i in range(10)]
    report = evaluate_maps(clusters, truth_map, pm=SMALL_PM, seed=11, nonhs_points=points)
    rep = report.maps["map_a"]
    assert rep.accuracy == 1.0
    assert rep.kappa == 1.0
    assert report.evaluated == 60 and report.excluded == ()
    assert rep.per_country["AA"]["n"] == 30
    assert report.to_dict()["maps"]["map_a"]["confusion"] == [[10, 0, 0], [0, 30, 0], [0, 0, 30]]


def test_shuffled_labels_give_chance_kappa():
    v = np.full((SIZE, SIZE), RURAL)
    v[:, :100] = URBAN
    halves = _map(v)
    rng = np.random.default_rng(99)
    clusters = []
    for i in range(10_000):
        col = int(rng.integers(10, 90)) + (100 if rng.random() < 0.5 else 0)
        label = "urban" if rng.random() < 0.5 else "rural"
        clusters.append(DhsCluster(f"s{i}", *_centre(col, int(rng.integers(10, 190))), label))
    report = evaluate_maps(clusters, halves, pm=SMALL_PM, seed=4, n=5)
    assert abs(report.maps["map_a"].kappa) < 0.05


def test_two_maps_share_draws_and_exclusions_are_listed():
    truth_map = _regions()
    everything_rural = _map(np.where(truth_map.values == URBAN, RURAL, truth_map.values))
    clusters = [
        DhsCluster("u", *_centre(25, 100), "urban"),
        DhsCluster("r", *_centre(125, 100), "rural"),
        DhsCluster("lost", *_centre(75, 100), "rural"),
    ]
    report = evaluate_maps(clusters, truth_map, everything_rural, prior_map=truth_map, pm=SMALL_PM,
                           names=("ours", "coarse"))
    assert report.excluded == ("lost",)
    assert report.maps["ours"].accuracy == 1.0
    assert report.maps["coarse"].accuracy == 0.5
    with pytest.raises(EmptyInputError):
        evaluate_maps(clusters[2:], truth_map, pm=SMALL_PM)


def test_hur_collapse():
    t = GeoTransform.north_up(0.0, 0.0, 10.0)
    lc = LabelRaster(np.array([[0, 6, 7, -1]]), t, 8)
    assert hur_from_landcover(lc).values.tolist() == [[NON_HS, RURAL, URBAN, -1]]
    smod = LabelRaster(np.array([[10, 12, 30, -200]]), t, 0, -200)
    assert hur_from_smod(smod).values.tolist() == [[NON_HS, RURAL, URBAN, -1]]


def test_synthetic_clusters_land_on_the_map():
    truth_map = _regions()
    clusters = synthesize_clusters(truth_map, 40, SMALL_PM, seed=8, country_of=lambda x, y: "AA")
    assert len(clusters) == 40
    assert {c.label for c in clusters} == {"urban", "rural"}
    index = SettlementIndex(truth_map)
    assert all(index.contains_point(c.lon, c.lat) for c in clusters)
    assert clusters == synthesize_clusters(truth_map, 40, SMALL_PM, seed=8, country_of=lambda x, y: "AA")
    points = synthesize_nonhs_points(truth_map, 5, seed=8)
    assert all(truth_map.values[int((SIZE * PIXEL - p.lat) // PIXEL), int(p.lon // PIXEL)] == NON_HS for p in points)


def test_cluster_csv_round_trip(tmp_path):
    clusters = [DhsCluster("1", 0.1 + 0.2, 12.5, "urban", 2016, "NA"), DhsCluster("2", 3.0, -4.0, "rural", 2018, "KE")]
    path = tmp_path / "clusters.csv"
    save_clusters(clusters, path)
    assert load_clusters(path) == clusters
    with pytest.raises(DataError):
        DhsCluster("x", 0.0, 0.0, "town")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
