import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transmix import (DEFAULT_SHEAR_FAMILY, ImageShape, VOID, apply,
                      apply_adjoint, build_shear_translation_set,
                      build_translation_set, identity_set,
                      shear_translate_op, shift_op, transform_diag_cov)

from oracles import dense_matrix


def test_translation_set_counts():
    ts = build_translation_set(ImageShape(11, 11), 11, 11)
    assert ts.L == 121
    single = build_translation_set(ImageShape(5, 5), 1, 1)
    assert single.L == 1
    x = np.arange(25.0)
    assert np.array_equal(apply(single[0], x), x)


def test_wrap_shift_moves_lit_pixel_everywhere():
    # brute force over all 9 pixel positions on a 3x3 grid
    shape = ImageShape(3, 3)
    down = shift_op(shape, 1, 0)
    up = shift_op(shape, -1, 0)
    for r in range(3):
        for c in range(3):
            x = np.zeros(9)
            x[r * 3 + c] = 1.0
            moved = apply(down, x)
            assert moved[((r + 1) % 3) * 3 + c] == 1.0
            assert moved.sum() == 1.0
            assert np.array_equal(apply(up, moved), x)


def test_apply_examples():
    shape = ImageShape(2, 2)
    x = np.array([1.0, 2.0, 3.0, 4.0])  # [a, b, c, d]
    wrap_right = shift_op(shape, 0, 1, "wrap")
    assert np.array_equal(apply(wrap_right, x), [2.0, 1.0, 4.0, 3.0])
    pad_down = shift_op(shape, 1, 0, "zero")
    assert np.array_equal(apply(pad_down, x), [0.0, 0.0, 1.0, 2.0])


def test_apply_adjoint_examples():
    shape = ImageShape(2, 2)
    ident = identity_set(ImageShape(2, 2))[0]
    x = np.array([0.3, -1.0, 2.0, 0.0])
    assert np.array_equal(apply_adjoint(ident, x), x)

    rng = np.random.default_rng(0)
    op = shift_op(ImageShape(4, 5), 2, -1, "wrap")
    v = rng.standard_normal(20)
    assert np.allclose(apply_adjoint(op, apply(op, v)), v)

    pad_down = shift_op(shape, 1, 0, "zero")
    y = apply(pad_down, np.array([1.0, 2.0, 3.0, 4.0]))
    # transpose of the hand-built 4x4 matrix maps [0,0,a,b] -> [a,b,0,0]
    assert np.array_equal(apply_adjoint(pad_down, y), [1.0, 2.0, 0.0, 0.0])


def test_transform_diag_cov_examples():
    shape = ImageShape(2, 2)
    phi = np.array([1.0, 2.0, 3.0, 4.0])
    ident = identity_set(shape)[0]
    psi = np.full(4, 0.5)
    assert np.array_equal(transform_diag_cov(ident, phi, psi), phi + psi)

    wrap_right = shift_op(shape, 0, 1, "wrap")
    got = transform_diag_cov(wrap_right, phi, np.zeros(4))
    assert np.array_equal(got, [2.0, 1.0, 4.0, 3.0])

    pad_down = shift_op(shape, 1, 0, "zero")
    got = transform_diag_cov(pad_down, phi, np.full(4, 0.1))
    assert np.allclose(got, [0.1, 0.1, 1.1, 2.1])


def test_transform_diag_cov_matches_dense_everywhere():
    rng = np.random.default_rng(1)
    shape = ImageShape(4, 4)
    sets = [build_translation_set(shape, 3, 3, "wrap"),
            build_translation_set(shape, 3, 3, "zero"),
            build_shear_translation_set(shape, [-0.5, 0.0, 0.5], 3, boundary="zero"),
            build_shear_translation_set(shape, [-0.5, 0.0, 0.5], 3, boundary="wrap")]
    for ts in sets:
        phi = rng.uniform(0.5, 2.0, shape.n)
        psi = rng.uniform(0.1, 1.0, shape.n)
        for op in ts:
            g = dense_matrix(op)
            dense = np.diag(g @ np.diag(phi) @ g.T) + psi
            assert np.allclose(transform_diag_cov(op, phi, psi), dense, atol=1e-15)


def test_default_shear_family():
    ts = build_shear_translation_set(ImageShape(8, 8))
    assert ts.L == len(DEFAULT_SHEAR_FAMILY) == 29
    # all ops distinct, identity present
    mats = {op.source_index.tobytes() for op in ts}
    assert len(mats) == 29
    ident = np.arange(64)
    assert any(np.array_equal(op.source_index, ident) for op in ts)


def test_zero_shear_zero_shift_is_identity():
    op = shear_translate_op(ImageShape(8, 8), 0.0, 0)
    assert np.array_equal(op.source_index, np.arange(64))


def test_shear_makes_diagonal_line():
    # enumerate pixels: vertical line at column 3 of an 8x8 image under a
    # unit-slope shear lands at column 3 + round(1.0 * (r - 3.5)) per row
    shape = ImageShape(8, 8)
    op = shear_translate_op(shape, 1.0, 0, boundary="zero")
    line = np.zeros((8, 8))
    line[:, 3] = 1.0
    out = apply(op, line.reshape(-1)).reshape(8, 8)
    expected = np.zeros((8, 8))
    for r in range(8):
        c = 3 + int(np.rint(1.0 * (r - 3.5)))
        if 0 <= c < 8:
            expected[r, c] = 1.0
    assert np.array_equal(out, expected)
    # scatter-then-gather is idempotent on the op's range
    y = out.reshape(-1)
    assert np.allclose(apply(op, apply_adjoint(op, y)), y)


def test_grid_indexing_invariant():
    ts = build_translation_set(ImageShape(5, 7), 3, 5)
    offsets = ts.grid_offsets()
    for l, (di, dj) in enumerate(offsets):
        assert ts.grid_index(di, dj) == l
        expected = shift_op(ts.shape, di, dj, ts.boundary)
        assert np.array_equal(ts[l].source_index, expected.source_index)


@settings(max_examples=120, deadline=None)
@given(st.integers(2, 8), st.integers(2, 8), st.integers(-7, 7),
       st.integers(-7, 7), st.integers(0, 2 ** 31 - 1))
def test_wrap_ops_are_bijections(h, w, di, dj, seed):
    op = shift_op(ImageShape(h, w), di, dj, "wrap")
    x = np.random.default_rng(seed).standard_normal(h * w)
    assert np.allclose(apply_adjoint(op, apply(op, x)), x)
    assert np.allclose(apply(op, apply_adjoint(op, x)), x)


def test_structural_linearity():
    # one source lookup per output pixel: the op carries exactly n indices
    ts = build_translation_set(ImageShape(6, 6), 5, 5)
    for op in ts:
        assert op.source_index.shape == (36,)


def test_validation_errors():
    shape = ImageShape(4, 4)
    with pytest.raises(ValueError):
        build_translation_set(shape, 4, 3)  # even count
    with pytest.raises(ValueError):
        build_translation_set(shape, 9, 1, "zero")  # degenerate range
    with pytest.raises(ValueError):
        build_translation_set(shape, 5, 11, "wrap")  # beyond extent
    op = shift_op(shape, 1, 1)
    with pytest.raises(ValueError):
        apply(op, np.zeros(7))
    with pytest.raises(ValueError):
        apply_adjoint(op, np.zeros(3))
    with pytest.raises(ValueError):
        transform_diag_cov(op, np.zeros(16), np.ones(16))
    with pytest.raises(ValueError):
        ImageShape(0, 3)
    with pytest.raises(ValueError):
        shear_translate_op(shape, np.inf, 0)


def test_batched_apply():
    op = shift_op(ImageShape(3, 3), 1, 2, "zero")
    rng = np.random.default_rng(3)
    batch = rng.standard_normal((5, 9))
    stacked = np.stack([apply(op, row) for row in batch])
    assert np.allclose(apply(op, batch), stacked)
    stacked_adj = np.stack([apply_adjoint(op, row) for row in batch])
    assert np.allclose(apply_adjoint(op, batch), stacked_adj)
