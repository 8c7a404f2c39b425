import numpy as np
import pytest

from transmix import ImageShape, apply, apply_adjoint, build_shear_translation_set
from transmix.synthgen import (DIRECTIONS, GLYPHS, LEFT_TURN, GroundTruth,
                               gen_occluded, gen_pacman, gen_shifted_template,
                               gen_sheared_glyphs, render_pacman_frame, sprite)


def test_sprites_are_rotations_and_distinct():
    mats = [sprite(d) for d in DIRECTIONS]
    for a, b in zip(mats, mats[1:] + mats[:1]):
        assert not np.array_equal(a, b)
    # each left turn is a quarter-turn counterclockwise
    for d in DIRECTIONS:
        assert np.array_equal(np.rot90(sprite(d)), sprite(LEFT_TURN[d]))
    assert all(m.sum() == 8 for m in mats)


def test_pacman_defaults_and_determinism():
    frames, truth = gen_pacman(seed=0)
    assert frames.shape == (200, 121)
    assert truth.clean.shape == (200, 121)
    again, truth2 = gen_pacman(seed=0)
    assert np.array_equal(frames, again)
    assert np.array_equal(truth.shifts, truth2.shifts)
    assert np.array_equal(truth.classes, truth2.classes)


def test_pacman_frozen_dynamics():
    frames, truth = gen_pacman(seed=1, T=20, bg_noise=0.0, sensor_noise=0.0,
                               p_stay=1.0, p_turn=0.0)
    assert np.ptp(truth.classes) == 0
    assert np.all(truth.shifts == truth.shifts[0])
    assert np.allclose(frames, frames[0])


def test_pacman_ground_truth_rerenders():
    frames, truth = gen_pacman(seed=2, T=50)
    shape = truth.params["shape"]
    bg = truth.params["background"]
    for t in range(50):
        re = render_pacman_frame(shape, truth.classes[t], *truth.shifts[t], bg)
        assert np.array_equal(re, truth.clean[t])


def test_pacman_turn_statistics():
    _, truth = gen_pacman(seed=3, T=100_000, grid=5, bg_noise=0.0,
                          sensor_noise=0.0)
    turns = np.mean(truth.classes[1:] != truth.classes[:-1])
    p = 0.75
    bound = 3 * np.sqrt(p * (1 - p) / (truth.classes.size - 1))
    assert abs(turns - p) <= bound


def test_shifted_template_zero_range():
    template = np.zeros((4, 4))
    template[1:3, 1:3] = 1.0
    frames, truth = gen_shifted_template(seed=4, template=template, T=10,
                                         shift_range=0, sensor_noise=0.1)
    assert np.all(truth.shifts == 0)
    assert np.allclose(truth.clean, template.reshape(-1))

    many, _ = gen_shifted_template(seed=5, template=template, T=10_000,
                                   shift_range=0, sensor_noise=0.1)
    stderr = 0.1 / np.sqrt(10_000)
    assert np.abs(many.mean(axis=0) - template.reshape(-1)).max() <= 3 * stderr


def test_shifted_template_walk_steps():
    template = np.ones((5, 5))
    _, truth = gen_shifted_template(seed=6, template=template, T=200,
                                    shift_range=2, sensor_noise=0.0, walk=True)
    deltas = np.abs(np.diff(truth.shifts, axis=0))
    assert deltas.max() <= 1
    assert np.abs(truth.shifts).max() <= 2


def test_shifted_template_rerenders():
    template = np.random.default_rng(7).uniform(0, 1, (5, 5))
    frames, truth = gen_shifted_template(seed=8, template=template, T=30,
                                         shift_range=2, sensor_noise=0.05)
    from transmix import shift_op
    shape = truth.params["shape"]
    for t in range(30):
        op = shift_op(shape, *truth.shifts[t], "wrap")
        assert np.array_equal(apply(op, template.reshape(-1)), truth.clean[t])


def test_glyphs_identity_zero_noise():
    ident = build_shear_translation_set(ImageShape(8, 8), [0.0], 1)
    images, labels, _ = gen_sheared_glyphs(seed=9, per_class=3,
                                           transform_set=ident,
                                           stroke_sigma=(), noise=0.0)
    for i, lab in enumerate(labels):
        assert np.array_equal(images[i], GLYPHS[lab].reshape(-1))


def test_glyphs_mirror_supervised_regime_shape():
    images, labels, _ = gen_sheared_glyphs(seed=10, per_class=200)
    assert images.shape == (2000, 64)
    assert np.array_equal(np.bincount(labels), np.full(10, 200))


def test_glyphs_inverse_op_nearest_prototype():
    # wrap ops so the true op inverts exactly; intensity-only variation
    ts = build_shear_translation_set(ImageShape(8, 8), boundary="wrap")
    images, labels, truth = gen_sheared_glyphs(seed=11, per_class=20,
                                               transform_set=ts,
                                               stroke_sigma=(0.15,), noise=0.0)
    protos = GLYPHS.reshape(10, -1)
    protos_n = protos / np.linalg.norm(protos, axis=1, keepdims=True)
    hits = 0
    for i in range(images.shape[0]):
        undone = apply_adjoint(ts[truth.params["ops"][i]], images[i])
        scores = protos_n @ (undone / max(np.linalg.norm(undone), 1e-12))
        hits += int(np.argmax(scores)) == labels[i]
    assert hits == images.shape[0]


def test_occluded_identity_and_full_bar():
    rng = np.random.default_rng(12)
    shape = ImageShape(4, 4)
    base = rng.uniform(0, 1, (6, 16))
    same, truth = gen_occluded(base, (0, 0, 0, 0), shape)
    assert np.array_equal(same, base)
    assert np.array_equal(truth.clean, base)

    dark, _ = gen_occluded(base, (0, 4, 0, 4), shape, value=0.2)
    assert np.all(dark == 0.2)


def test_occluded_coverage_of_moving_template():
    template = np.zeros((8, 8))
    template[2:6, 2:6] = 1.0
    frames, truth = gen_shifted_template(seed=13, template=template, T=60,
                                         shift_range=3, sensor_noise=0.0)
    shape = truth.params["shape"]
    bar = (0, 8, 3, 5)  # vertical bar, 25% of the image
    occluded, occ_truth = gen_occluded(frames, bar, shape)
    mask = occ_truth.params["mask"]
    assert mask.mean() <= 0.30
    # every latent template pixel escapes the bar in at least one frame
    from transmix import shift_op
    support = template.reshape(-1) > 0.5
    seen = np.zeros(shape.n, dtype=bool)
    for t in range(60):
        op = shift_op(shape, *truth.shifts[t], "wrap")
        unoccluded_latent = apply_adjoint(op, (~mask).astype(float)) > 0.5
        seen |= support & unoccluded_latent
    assert np.array_equal(seen, support)


def test_occluded_bounds_checked():
    with pytest.raises(ValueError):
        gen_occluded(np.zeros((2, 16)), (0, 5, 0, 2), ImageShape(4, 4))
