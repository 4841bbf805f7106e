import json
import math

import numpy as np
import pytest

from sketchsearch.features import (
    FeatureFormatError,
    FeatureVector,
    GridExtractor,
    extract_grid_features,
    gen_synthetic,
    load_features,
    load_trajectories,
    save_features,
    save_trajectories,
)


def test_empty_sketch_gives_zero_vector():
    feat = extract_grid_features(None, np.empty((0, 4)))
    assert feat.dim == 2048
    assert not feat.v.any()


def test_single_segment_lands_in_one_bin():
    # Horizontal segment inside cell (row 0, col 2) of the 16x16 grid.
    seg = np.array([[0.13, 0.03, 0.17, 0.03]])
    feat = extract_grid_features(None, seg)
    nz = np.nonzero(feat.v)[0]
    assert list(nz) == [(0 * 16 + 2) * 8 + 0]
    assert feat.v[nz[0]] == pytest.approx(0.04, abs=1e-12)


def test_zero_length_segment_skipped():
    seg = np.array([[0.5, 0.5, 0.5, 0.5]])
    feat = extract_grid_features(None, seg)
    assert not feat.v.any()


def test_orientation_is_undirected():
    left = extract_grid_features(None, np.array([[0.2, 0.5, 0.4, 0.5]]))
    right = extract_grid_features(None, np.array([[0.4, 0.5, 0.2, 0.5]]))
    assert np.array_equal(left.v, right.v)


def test_mass_conservation_oracle():
    # Independent per-segment accumulation: L1 norm equals summed lengths.
    rng = np.random.default_rng(42)
    segs = rng.random((50, 4))
    feat = extract_grid_features(None, segs)
    total = sum(
        math.hypot(x1 - x0, y1 - y0) for x0, y0, x1, y1 in segs
    )
    assert feat.v.sum() == pytest.approx(total, rel=1e-12)
    assert (feat.v >= 0).all()


def test_extractor_deterministic():
    rng = np.random.default_rng(1)
    strokes = [rng.random((8, 2)), rng.random((3, 2))]
    ex = GridExtractor()
    a = ex.features_for(strokes)
    b = ex.features_for(strokes)
    assert np.array_equal(a.v, b.v)
    assert a.dim == 2048


def test_feature_file_round_trip(tmp_path):
    feats = [
        FeatureVector("a", np.array([1.0, -2.5, 3.3333333333333335])),
        FeatureVector("b", np.array([0.1, 0.2, 1e-17])),
        FeatureVector("c", np.array([7.0, 8.0, 9.0])),
    ]
    path = tmp_path / "f.ndjson"
    save_features(feats, path)
    loaded = load_features(path)
    assert [f.id for f in loaded] == ["a", "b", "c"]
    for orig, back in zip(feats, loaded):
        assert np.array_equal(orig.v, back.v)


def test_feature_file_dimension_mismatch_names_both_records(tmp_path):
    path = tmp_path / "f.ndjson"
    path.write_text(
        json.dumps({"id": "big", "v": [0.0] * 4})
        + "\n"
        + json.dumps({"id": "small", "v": [0.0] * 2})
        + "\n"
    )
    with pytest.raises(FeatureFormatError) as err:
        load_features(path)
    assert "big" in str(err.value) and "small" in str(err.value)


def test_feature_file_rejects_nan(tmp_path):
    path = tmp_path / "f.ndjson"
    path.write_text('{"id": "x", "v": [1.0, NaN]}\n')
    with pytest.raises(FeatureFormatError, match="non-finite"):
        load_features(path)


def test_synthetic_final_step_closest_trivial():
    data = gen_synthetic(n_photos=2, H=8, T=2, k_profile=1, noise=0.0, seed=3)
    for i, trajectory in enumerate(data.episodes):
        own = data.photo_features[i].v
        other = data.photo_features[1 - i].v
        final = trajectory[-1].v
        assert np.linalg.norm(final - own) < np.linalg.norm(final - other)


def test_synthetic_deterministic():
    a = gen_synthetic(5, 16, 6, 2, 0.2, seed=9)
    b = gen_synthetic(5, 16, 6, 2, 0.2, seed=9)
    for fa, fb in zip(a.photo_features, b.photo_features):
        assert np.array_equal(fa.v, fb.v)
    for ea, eb in zip(a.episodes, b.episodes):
        for fa, fb in zip(ea, eb):
            assert np.array_equal(fa.v, fb.v)


def test_synthetic_final_step_closest_invariant():
    data = gen_synthetic(20, 16, 10, 3, 0.3, seed=5)
    for i, trajectory in enumerate(data.episodes):
        own = data.photo_features[i].v
        dists = [np.linalg.norm(f.v - own) for f in trajectory]
        assert int(np.argmin(dists)) == data.T - 1


def test_synthetic_monotone_approach_oracle():
    # Independent script: mean distance from trajectory step to its own photo,
    # over all episodes, must strictly decrease in t.
    data = gen_synthetic(200, 32, 20, 4, 0.1, seed=7)
    means = []
    for t in range(data.T):
        total = 0.0
        for i, trajectory in enumerate(data.episodes):
            diff = trajectory[t].v - data.photo_features[i].v
            total += math.sqrt(float(np.dot(diff, diff)))
        means.append(total / len(data.episodes))
    assert all(means[t + 1] < means[t] for t in range(data.T - 1)), means


def test_trajectory_file_round_trip(tmp_path):
    data = gen_synthetic(4, 8, 5, 2, 0.1, seed=1)
    path = tmp_path / "traj.ndjson"
    save_trajectories(data.episodes, path)
    loaded = load_trajectories(path)
    assert [pid for pid, _ in loaded] == [f.id for f in data.photo_features]
    for (pid, steps), orig in zip(loaded, data.episodes):
        assert len(steps) == data.T
        for fa, fb in zip(steps, orig):
            assert np.array_equal(fa.v, fb.v)


def test_trajectory_file_rejects_gaps(tmp_path):
    path = tmp_path / "traj.ndjson"
    records = [
        {"id": "p#0", "v": [1.0, 2.0]},
        {"id": "p#2", "v": [1.0, 2.0]},
    ]
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    with pytest.raises(FeatureFormatError, match="steps"):
        load_trajectories(path)
