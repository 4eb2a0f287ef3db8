import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from woundfill.filling import WoundSegmentation, extract_filling
from woundfill.mesh import check_watertight
from woundfill.synthgen import (
    InfeasiblePackingError,
    SynthConfig,
    carve_wound,
    crater_profile,
    generate_dataset,
    generate_icosphere,
    random_direction,
    read_dataset,
    surface_distance,
    write_dataset,
)

from oracles import voxel_volume_between


@pytest.mark.parametrize("level, nv, nf", [(0, 12, 20), (1, 42, 80), (2, 162, 320), (3, 642, 1280)])
def test_icosphere_counts(level, nv, nf):
    s = generate_icosphere(level)
    assert (s.n_vertices, s.n_faces) == (nv, nf)


def test_icosphere_on_sphere():
    s = generate_icosphere(3, 7.5)
    assert np.abs(np.linalg.norm(s.vertices, axis=1) - 7.5).max() < 1e-9


def test_icosphere_level_range():
    with pytest.raises(ValueError):
        generate_icosphere(7)


def test_profile_edges():
    assert crater_profile(np.array([0.0]), 5.0)[0] == 1.0
    assert crater_profile(np.array([5.0]), 5.0)[0] == 0.0
    assert crater_profile(np.array([5.0 - 1e-9]), 5.0)[0] < 1e-18


def test_zero_depth_keeps_geometry_but_marks_region():
    base = generate_icosphere(3, 50.0)
    w, lab = carve_wound(base, [0, 0, 1], 10.0, 0.0, seed=1, base_radius=50.0)
    assert np.array_equal(w.vertices, base.vertices) and lab.sum() > 0


def test_overlap_rejected():
    base = generate_icosphere(3, 50.0)
    _, lab = carve_wound(base, [0, 0, 1], 10.0, 2.0, seed=1, base_radius=50.0)
    with pytest.raises(InfeasiblePackingError):
        carve_wound(base, [0, 0.1, 1], 10.0, 2.0, seed=2, base_radius=50.0, existing=lab)


def test_crater_pocket_volume_matches_voxels():
    base = generate_icosphere(5, 50.0)
    d = random_direction(np.random.default_rng(3))
    w, lab = carve_wound(base, d, 5.0, 2.0, seed=3, base_radius=50.0)
    faces = base.faces[lab == 1]
    vol = extract_filling(w, base, WoundSegmentation.from_labels(w, lab)).volume
    assert vol == pytest.approx(voxel_volume_between(base, w, faces, d), rel=0.1)


def test_dataset_counts_and_pairing():
    cfg = SynthConfig(seed=7, bases=4, wound_count=3)
    samples = generate_dataset(cfg)
    assert len(samples) == 16 and sum(s.is_wounded for s in samples) == 12
    for s in samples:
        assert s.healthy.n_vertices == s.wounded.n_vertices
        assert np.array_equal(s.healthy.faces, s.wounded.faces)
        assert check_watertight(s.wounded).is_watertight
        if s.is_wounded:
            assert 0 < s.labels.mean() < 0.15
            moved = np.any(s.healthy.vertices != s.wounded.vertices, axis=1)
            # every moved vertex lies inside some crater, and its faces are wound
            inside = np.zeros(s.healthy.n_vertices, bool)
            for c in s.craters:
                inside |= surface_distance(s.healthy, c["direction"], cfg.base_radius) < c["radius"]
            assert not np.any(moved & ~inside)
            assert np.array_equal(s.labels == 1, inside[s.wounded.faces].any(1))


def test_dataset_is_deterministic():
    a = generate_dataset(SynthConfig(seed=7))
    b = generate_dataset(SynthConfig(seed=7))
    for x, y in zip(a, b):
        assert np.array_equal(x.wounded.vertices, y.wounded.vertices)
        assert np.array_equal(x.labels, y.labels)


def test_write_and_read_dataset(tmp_path):
    cfg = SynthConfig(seed=2, bases=2, wound_count=2)
    samples = generate_dataset(cfg)
    manifest = write_dataset(samples, tmp_path, cfg)
    assert json.loads((tmp_path / "manifest.json").read_text())["seed"] == 2
    _, back = read_dataset(tmp_path)
    assert [s.sample_id for s in back] == [s.sample_id for s in samples]
    for x, y in zip(samples, back):
        assert np.array_equal(x.labels, y.labels)
        assert np.abs(x.wounded.vertices - y.wounded.vertices).max() < 1e-9
    assert len(manifest["samples"]) == 6


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(depth_range=(10, 60))
    with pytest.raises(ValueError):
        SynthConfig(radius_range=(0, 5))
    with pytest.raises(ValueError):
        SynthConfig(roughness=0.2)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.5, 4.0))
def test_deeper_crater_holds_more(seed, depth):
    base = generate_icosphere(4, 50.0)
    d = random_direction(np.random.default_rng(seed))
    vols = []
    for dd in (depth, depth * 1.5):
        w, lab = carve_wound(base, d, 8.0, dd, seed=seed, base_radius=50.0)
        vols.append(extract_filling(w, base, WoundSegmentation.from_labels(w, lab)).volume)
    assert vols[1] > vols[0]
