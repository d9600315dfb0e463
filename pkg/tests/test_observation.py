import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artpose.observation import (
    CorruptionSpec,
    HeatmapFormatError,
    Observation,
    default_camera,
    load_heatmap,
    load_scene,
    make_scene,
    masked_depth,
    sample_configuration,
    save_heatmap,
    save_scene,
    synthesize,
    visible_masks,
)
from artpose.potentials import jaccard
from artpose.rendering import render


@pytest.fixture(scope="module")
def scene_gt(clamp):
    gt, _ = sample_configuration(clamp, np.random.default_rng(4))
    return gt


def test_zero_corruption_heatmaps_are_visible_masks(clamp, camera, scene_gt):
    obs, _ = synthesize(clamp, scene_gt, camera, CorruptionSpec(), seed=0)
    masks, zbuf = visible_masks(clamp, scene_gt, camera)
    assert np.array_equal(obs.heatmaps, masks.astype(np.float32))
    assert np.array_equal(obs.depth, zbuf)
    for s, part in enumerate(clamp.parts):
        full, depth = render(part.mesh, scene_gt[s], camera)
        # visible pixels are a subset of the part's own render
        assert not np.any(masks[s] & ~full)
        if np.array_equal(masks[s], full):
            assert jaccard(full, obs.heatmaps[s]) == pytest.approx(1.0)
            assert np.allclose(obs.masked_depth(s), depth)


def test_single_part_scene_is_unoccluded(camera):
    import tempfile

    from artpose.assets import single_part_urdf
    from artpose.kinematics import load_urdf

    with tempfile.TemporaryDirectory() as d:
        model = load_urdf(single_part_urdf(d))
    gt, _ = sample_configuration(model, np.random.default_rng(0))
    obs, _ = synthesize(model, gt, camera)
    mask, depth = render(model.parts[0].mesh, gt[0], camera)
    assert jaccard(mask, obs.heatmaps[0]) == 1.0
    assert np.array_equal(masked_depth(obs.heatmaps[0], obs.depth, 0.5), depth)


def test_dropout_zeroes_heatmap(clamp, camera, scene_gt):
    obs, _ = synthesize(clamp, scene_gt, camera, CorruptionSpec(dropout_parts=[3]))
    assert not obs.heatmaps[3].any()
    assert all(obs.heatmaps[s].any() for s in range(3))


def test_rectangle_over_half_the_mask_halves_heat(clamp, camera, scene_gt):
    clean, _ = synthesize(clamp, scene_gt, camera)
    _, cols = np.nonzero(clean.heatmaps[0])
    # split the part's pixels at the median column
    ucut = int(np.median(cols))
    rect = (0, 0, ucut, camera.height, 0.05)
    occl, _ = synthesize(clamp, scene_gt, camera, CorruptionSpec(occlusion_rects=[rect]))
    before = clean.heatmaps[0].sum()
    after = occl.heatmaps[0].sum()
    expected = before - np.sum(cols < ucut)
    assert after == expected
    assert abs(after / before - 0.5) < 0.1
    assert np.all(occl.depth[:, :ucut][clean.depth[:, :ucut] > 0] == 0.05)


def test_masked_depth_examples():
    rng = np.random.default_rng(0)
    depth = rng.uniform(0.0, 2.0, (6, 7))
    heat = rng.uniform(0.01, 1.0, (6, 7))
    assert np.array_equal(masked_depth(heat, depth, 0.0), depth)
    assert not masked_depth(heat, depth, 1.01).any()
    binary = (rng.random((6, 7)) < 0.4).astype(float)
    md = masked_depth(binary, depth, 0.5)
    assert np.array_equal(md, np.where(binary > 0, depth, 0.0))


def test_heatmap_round_trip(tmp_path):
    h = np.random.default_rng(1).random((13, 17)).astype(np.float32)
    save_heatmap(h, tmp_path / "h.hmap")
    back = load_heatmap(tmp_path / "h.hmap")
    assert back.shape == (13, 17) and back.tobytes() == h.tobytes()
    assert (tmp_path / "h.hmap").read_bytes().startswith(b"HMAP 17 13\n")


def test_heatmap_format_errors(tmp_path):
    h = np.full((4, 5), 0.25, dtype="<f4")
    good = b"HMAP 5 4\n" + h.tobytes()
    cases = {
        "truncated": good[:-3],
        "magic": b"HEAT 5 4\n" + h.tobytes(),
        "dims": b"HMAP 4 4\n" + h.tobytes(),
        "noheader": b"HMAP 5 4",
    }
    bad = h.copy()
    bad[2, 3] = 1.5
    cases["range"] = b"HMAP 5 4\n" + bad.tobytes()
    for name, data in cases.items():
        (tmp_path / name).write_bytes(data)
        with pytest.raises(HeatmapFormatError):
            load_heatmap(tmp_path / name)


def test_length_mismatch_is_an_error(clamp, camera, scene_gt):
    with pytest.raises(ValueError):
        synthesize(clamp, scene_gt[:2], camera)


def test_corruption_spec_invariants():
    with pytest.raises(ValueError):
        CorruptionSpec(blur_radius=-1)
    with pytest.raises(ValueError):
        CorruptionSpec(noise_sigma=-0.1)
    with pytest.raises(ValueError):
        CorruptionSpec(background_depth=0.0)


def test_observation_rejects_out_of_range(camera):
    h = np.zeros((1, *camera.shape))
    h[0, 0, 0] = 1.2
    with pytest.raises(ValueError):
        Observation(h, np.zeros(camera.shape), camera)
    with pytest.raises(ValueError):
        Observation(np.zeros((1, 3, 3)), np.zeros(camera.shape), camera)


@settings(max_examples=15)
@given(
    seed=st.integers(0, 2**31),
    blur=st.integers(0, 3),
    noise=st.floats(0.0, 0.5),
    dnoise=st.floats(0.0, 0.05),
)
def test_corruption_ranges_and_determinism(clamp, camera, scene_gt, seed, blur, noise, dnoise):
    spec = CorruptionSpec(
        occlusion_rects=[(100, 80, 160, 140, 0.3)],
        blur_radius=blur,
        noise_sigma=noise,
        depth_noise_sigma=dnoise,
        dropout_parts=[1],
        background_depth=0.8,
    )
    a, _ = synthesize(clamp, scene_gt, camera, spec, seed)
    b, _ = synthesize(clamp, scene_gt, camera, spec, seed)
    assert np.array_equal(a.heatmaps, b.heatmaps) and np.array_equal(a.depth, b.depth)
    assert a.heatmaps.min() >= 0 and a.heatmaps.max() <= 1
    assert a.depth.min() >= 0 and np.all(np.isfinite(a.depth))


def test_background_fills_empty_pixels(clamp, camera, scene_gt):
    plain, _ = synthesize(clamp, scene_gt, camera)
    bg, _ = synthesize(clamp, scene_gt, camera, CorruptionSpec(background_depth=0.9))
    assert np.all(bg.depth[plain.depth == 0] == 0.9)
    assert np.array_equal(bg.depth[plain.depth > 0], plain.depth[plain.depth > 0])
    assert np.array_equal(bg.heatmaps, plain.heatmaps)


def test_scene_save_load_round_trip(clamp, tmp_path):
    from artpose.assets import clamp_urdf_path

    scene = make_scene(clamp, 7, "cluttered", default_camera(), urdf=str(clamp_urdf_path()))
    save_scene(scene, tmp_path / "s")
    back = load_scene(tmp_path / "s")
    assert back.scene_id == scene.scene_id and back.regime == "cluttered"
    assert np.array_equal(back.observation.heatmaps, scene.observation.heatmaps)
    # depth is stored in whole millimeters
    assert np.allclose(back.observation.depth, scene.observation.depth, atol=5e-4)
    for a, b in zip(back.gt, scene.gt):
        assert np.allclose(a.translation, b.translation) and np.allclose(a.rotation, b.rotation)
    assert back.corruption.to_dict() == scene.corruption.to_dict()
    with pytest.raises(FileNotFoundError):
        load_scene(tmp_path / "nowhere")


def test_make_scene_is_deterministic(clamp):
    a = make_scene(clamp, 3, "cluttered")
    b = make_scene(clamp, 3, "cluttered")
    assert np.array_equal(a.observation.heatmaps, b.observation.heatmaps)
    assert np.array_equal(a.observation.depth, b.observation.depth)
