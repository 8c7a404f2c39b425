import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transmix import ImageShape, build_shear_translation_set, build_translation_set
from transmix.model_io import (ChecksumError, FamilyMismatchError, ModelIOError,
                               UnknownFamilyError, VersionError, load_model,
                               montage, read_frames, read_pgm, save_model,
                               write_frames, write_pgm)
from transmix.mtca import init_mtca
from transmix.tca import init_tca
from transmix.thmm import init_thmm, uniform_motion
from transmix.tmg import init_tmg


def fields_equal(a, b):
    for name in vars(a):
        va, vb = getattr(a, name), getattr(b, name)
        if isinstance(va, np.ndarray):
            if not np.array_equal(va, vb):
                return False
    return True


def make_models():
    rng = np.random.default_rng(0)
    shape = ImageShape(4, 4)
    grid = build_translation_set(shape, 3, 3)
    shear = build_shear_translation_set(shape, [-0.5, 0.0, 0.5], 3, boundary="zero")
    X = rng.uniform(0, 1, (12, 16))
    return {
        "tmg": init_tmg(shear, 2, X, seed=1),
        "tca": init_tca(grid, 2, X, seed=2, fast_likelihood=True),
        "mtca": init_mtca(shear, 2, 1, X, seed=3),
        "thmm": init_thmm(grid, 2, X, seed=4,
                          motion=uniform_motion(1.5, "magnitude",
                                                per_class=True, n_classes=2)),
    }


def test_round_trip_bit_exact(tmp_path):
    for name, model in make_models().items():
        path = tmp_path / f"{name}.txm"
        save_model(model, path)
        loaded = load_model(path)
        assert type(loaded) is type(model)
        assert fields_equal(model, loaded)
        ts_a, ts_b = model.transforms, loaded.transforms
        assert ts_a.boundary == ts_b.boundary
        assert ts_a.grid == ts_b.grid
        assert ts_a.params == ts_b.params
        assert np.array_equal(ts_a.source_matrix, ts_b.source_matrix)
        if name == "thmm":
            assert np.array_equal(model.motion.table, loaded.motion.table)
            assert model.motion.mode == loaded.motion.mode


def test_canonical_bytes(tmp_path):
    model = make_models()["tmg"]
    a, b = tmp_path / "a.txm", tmp_path / "b.txm"
    save_model(model, a)
    save_model(model, b)
    assert a.read_bytes() == b.read_bytes()


def test_truncation_gives_checksum_error(tmp_path):
    model = make_models()["tca"]
    path = tmp_path / "m.txm"
    save_model(model, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-10])
    with pytest.raises((ChecksumError, ModelIOError)):
        load_model(path)
    # flipped byte in the middle
    corrupt = bytearray(raw)
    corrupt[len(raw) // 2] ^= 0xFF
    path.write_bytes(bytes(corrupt))
    with pytest.raises(ChecksumError):
        load_model(path)


def test_family_mismatch(tmp_path):
    model = make_models()["tmg"]
    path = tmp_path / "m.txm"
    save_model(model, path)
    with pytest.raises(FamilyMismatchError):
        load_model(path, family="thmm")
    assert load_model(path, family="tmg") is not None


def test_version_and_family_errors(tmp_path):
    model = make_models()["tmg"]
    path = tmp_path / "m.txm"
    save_model(model, path)
    raw = path.read_bytes()

    def rewrite(old, new):
        body = raw[:-4].replace(old, new, 1)
        import struct
        import zlib
        return body + struct.pack("<I", zlib.crc32(body))

    path.write_bytes(rewrite(b"TXMODEL 1", b"TXMODEL 9"))
    with pytest.raises(VersionError):
        load_model(path)
    path.write_bytes(rewrite(b"family tmg", b"family xyz"))
    with pytest.raises(UnknownFamilyError):
        load_model(path)


def test_pgm_round_trip_8_and_16_bit(tmp_path):
    rng = np.random.default_rng(5)
    img = rng.uniform(0, 1, (6, 5))
    for maxval in (255, 65535):
        path = tmp_path / f"img{maxval}.pgm"
        write_pgm(path, img, maxval=maxval)
        back, mv = read_pgm(path)
        assert mv == maxval
        assert np.abs(back - img).max() <= 0.5 / maxval + 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.sampled_from([255, 65535]))
def test_pgm_quantization_bound(seed, maxval):
    import tempfile
    img = np.random.default_rng(seed).uniform(0, 1, (3, 4))
    with tempfile.TemporaryDirectory() as d:
        path = f"{d}/x.pgm"
        write_pgm(path, img, maxval=maxval)
        back, _ = read_pgm(path)
        assert np.abs(back - img).max() <= 0.5 / maxval + 1e-12


def test_frames_directory_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    shape = ImageShape(5, 4)
    frames = rng.uniform(0, 1, (7, 20))
    write_frames(frames, shape, tmp_path / "seq", maxval=65535)
    back, got_shape = read_frames(tmp_path / "seq")
    assert got_shape == shape
    assert back.shape == frames.shape
    assert np.abs(back - frames).max() <= 0.5 / 65535 + 1e-12


def test_frames_errors(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(ValueError):
        read_frames(empty)

    mixed = tmp_path / "mixed"
    mixed.mkdir()
    write_pgm(mixed / "frame_0000.pgm", np.zeros((2, 2)))
    write_pgm(mixed / "frame_0001.pgm", np.zeros((3, 3)))
    with pytest.raises(ValueError, match="frame_0001"):
        read_frames(mixed)

    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "frame_0000.pgm").write_bytes(b"P6\n2 2\n255\n")
    with pytest.raises(ValueError, match="frame_0000"):
        read_frames(bad)


def test_pgm_comments_and_16bit_values(tmp_path):
    path = tmp_path / "c.pgm"
    payload = np.array([[0, 32768], [65535, 1234]], dtype=">u2").tobytes()
    path.write_bytes(b"P5\n# a comment\n2 2\n65535\n" + payload)
    img, maxval = read_pgm(path)
    assert maxval == 65535
    assert img[1, 0] == 1.0 and img[0, 0] == 0.0


def test_montage_layout():
    images = np.stack([np.zeros(6), np.ones(6), np.full(6, 0.5)])
    out = montage(images, ImageShape(2, 3), cols=2, pad=1)
    assert out.shape == (2 * 2 + 1, 3 * 2 + 1)
    assert out[0, 0] == 0.0 and out[0, 4] == 1.0
