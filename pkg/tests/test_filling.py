import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from woundfill.filling import (
    REFERENCE_ACCURACY_OLD,
    REFERENCE_ACCURACY_OURS,
    EmptyWoundError,
    PairCase,
    TopologyMismatchError,
    WatertightnessError,
    WoundSegmentation,
    cases_from_samples,
    compare_methods,
    extract_filling,
    old_outlier_extract,
    save_filling,
    segment_wound,
)
from woundfill.mesh import TriMesh, check_watertight, mesh_volume
from woundfill.meshio import load_mesh, stl_size
from woundfill.synthgen import SynthConfig, carve_wound, generate_dataset, generate_icosphere, random_direction

from oracles import brute_force_displaced, symmetric_difference_accuracy


def _crater(depth=2.0, radius=5.0, seed=0, level=4):
    base = generate_icosphere(level, 50.0)
    d = random_direction(np.random.default_rng(seed))
    w, lab = carve_wound(base, d, radius, depth, seed=seed, base_radius=50.0)
    return base, w, lab


def _one_hot(mesh):
    return np.eye(2)[mesh.labels]


def test_segment_with_truth_stub():
    _, w, lab = _crater()
    w = TriMesh(w.vertices, w.faces, lab)
    seg = segment_wound(_one_hot, w)
    assert np.array_equal(seg.wound_faces, np.flatnonzero(lab))
    assert np.array_equal(seg.wound_vertices, np.unique(w.faces[lab == 1]))


def test_segment_empty_is_valid():
    _, w, _ = _crater()
    seg = segment_wound(lambda m: np.tile([1.0, 0.0], (m.n_faces, 1)), w)
    assert len(seg) == 0 and len(seg.wound_vertices) == 0


def test_segment_shape_mismatch():
    _, w, _ = _crater()
    with pytest.raises(ValueError):
        segment_wound(lambda m: np.ones((3, 2)), w)


def test_extract_crater_is_watertight_and_positive():
    base, w, lab = _crater()
    res = extract_filling(w, base, WoundSegmentation.from_labels(w, lab))
    assert res.watertight and check_watertight(res.mesh).is_watertight
    assert res.volume > 0 and mesh_volume(res.mesh) == pytest.approx(res.volume)
    assert res.diagnostics["stitched_loops"] == 1
    assert np.array_equal(res.wound_vertices, np.unique(w.faces[lab == 1]))


def test_zero_thickness_is_reported():
    base, w, lab = _crater()
    with pytest.raises(WatertightnessError) as err:
        extract_filling(w, w, WoundSegmentation.from_labels(w, lab))
    assert err.value.diagnostics["zero_thickness"] is True


def test_empty_wound():
    base, w, _ = _crater()
    with pytest.raises(EmptyWoundError):
        extract_filling(w, base, WoundSegmentation.from_faces(w, []))


def test_vertex_count_mismatch():
    base, w, lab = _crater()
    other = generate_icosphere(3, 50.0)
    with pytest.raises(TopologyMismatchError):
        extract_filling(w, other, WoundSegmentation.from_labels(w, lab))


def test_two_wounds_give_two_loops():
    base = generate_icosphere(4, 50.0)
    w, lab = carve_wound(base, [0, 0, 1], 8.0, 2.0, seed=1, base_radius=50.0)
    w, lab2 = carve_wound(w, [0, 0, -1], 8.0, 3.0, seed=2, base_radius=50.0, existing=lab)
    res = extract_filling(w, base, WoundSegmentation.from_labels(w, np.maximum(lab, lab2)))
    assert res.diagnostics["stitched_loops"] == 2 and res.watertight


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_volume_is_rotation_invariant(seed):
    base, w, lab = _crater(seed=seed % 1000)
    seg = WoundSegmentation.from_labels(w, lab)
    v0 = extract_filling(w, base, seg).volume
    rng = np.random.default_rng(seed)
    R = Rotation.random(random_state=seed).as_matrix()
    t = rng.normal(size=3) * 10
    moved = extract_filling(TriMesh(w.vertices @ R.T + t, w.faces), TriMesh(base.vertices @ R.T + t, base.faces), seg)
    assert moved.volume == pytest.approx(v0, rel=1e-6)


def test_save_filling_writes_stl_and_json(tmp_path):
    base, w, lab = _crater()
    res = extract_filling(w, base, WoundSegmentation.from_labels(w, lab))
    j = save_filling(res, tmp_path / "fill.stl")
    assert (tmp_path / "fill.stl").stat().st_size == stl_size(res.mesh.n_faces)
    data = json.loads(j.read_text())
    assert {"volume_mm3", "watertight", "faces", "vertices", "stitched_loops"} <= set(data)
    back = load_mesh(tmp_path / "fill.stl")
    assert back.n_faces == res.mesh.n_faces
    assert mesh_volume(back) == pytest.approx(res.volume, rel=1e-5)


def test_old_outlier_basic():
    base = generate_icosphere(2)
    assert len(old_outlier_extract(base, base)) == 0
    v = base.vertices.copy()
    v[17] += [0.0, 1.0, 0.0]
    assert old_outlier_extract(TriMesh(v, base.faces), base, 0.1).tolist() == [17]
    with pytest.raises(TopologyMismatchError):
        old_outlier_extract(base, generate_icosphere(1))


def test_old_outlier_matches_scan():
    base, w, _ = _crater(depth=2.0, radius=8.0, seed=4)
    assert set(old_outlier_extract(w, base, 0.1).tolist()) == brute_force_displaced(w, base, 0.1)


@pytest.fixture(scope="module")
def cases():
    cfg = SynthConfig(seed=3, bases=2, wound_count=2)
    return cases_from_samples(generate_dataset(cfg))


def test_truth_stub_scores_one(cases):
    report = compare_methods(cases, _one_hot)
    assert report.mean_accuracy_ours == 1.0
    assert report.mean_accuracy_ours == np.mean(report.accuracy_ours)
    assert report.mean_accuracy_old == pytest.approx(np.mean(report.accuracy_old))
    assert [r["mesh_id"] for r in report.rows] == sorted(c.mesh_id for c in cases)
    assert report.reference["accuracy_ours_full_dataset"] == REFERENCE_ACCURACY_OURS
    assert report.reference["accuracy_old_full_dataset"] == REFERENCE_ACCURACY_OLD


def test_comparison_matches_exhaustive_accuracy(cases):
    report = compare_methods(cases, _one_hot, threshold=0.1)
    for case, row in zip(sorted(cases, key=lambda c: c.mesh_id), report.rows):
        gt = np.unique(case.wounded.faces[case.labels == 1])
        old = brute_force_displaced(case.wounded, case.healthy, 0.1)
        assert row["accuracy_old"] == pytest.approx(symmetric_difference_accuracy(old, gt, case.wounded.n_vertices))


def test_depth_factor_thresholds(cases):
    report = compare_methods(cases, _one_hot, depth_factor=0.5)
    assert report.threshold is None and report.depth_factor == 0.5
    for case, row in zip(sorted(cases, key=lambda c: c.mesh_id), report.rows):
        assert row["threshold"] == 0.5 * case.depth


def test_empty_prediction_row():
    base, w, lab = _crater()
    case = PairCase("a", TriMesh(w.vertices, w.faces, lab), base, lab, 2.0)
    report = compare_methods([case], lambda m: np.tile([1.0, 0.0], (m.n_faces, 1)))
    assert report.rows[0]["extraction"] == "empty segmentation"
    assert report.rows[0]["ours_vertices"] == 0
