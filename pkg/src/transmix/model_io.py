"""Model and frame file handling.

Model files are one self-contained artifact: a human-readable ASCII header,
the transformation set (boundary, grid, per-op source-index table), the
parameter blocks as little-endian float64 in a fixed order, and a trailing
CRC32 of everything before it.  Saving the same model twice yields identical
bytes.

Frames are binary PGM (P5), 8- or 16-bit, mapped linearly to [0, 1].
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .thmm import MotionPrior, ThmmModel
from .mtca import MtcaModel
from .tca import TcaModel
from .tmg import TmgModel
from .transforms import ImageShape, TransformOp, TransformationSet

MAGIC = "TXMODEL"
VERSION = 1


class ModelIOError(Exception):
    """Base class for model-file problems."""


class VersionError(ModelIOError):
    """File magic or format version does not match this reader."""


class ChecksumError(ModelIOError):
    """Trailing checksum does not validate the payload."""


class UnknownFamilyError(ModelIOError):
    """File declares a family this reader does not know."""


class FamilyMismatchError(ModelIOError):
    """File holds a different family than the caller asked for."""


_FAMILIES = ("tmg", "tca", "mtca", "thmm")


def _family_of(model) -> str:
    if isinstance(model, TmgModel):
        return "tmg"
    if isinstance(model, TcaModel):
        return "tca"
    if isinstance(model, MtcaModel):
        return "mtca"
    if isinstance(model, ThmmModel):
        return "thmm"
    raise TypeError(f"cannot serialize {type(model).__name__}")


def _f64(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def _i64(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<i8").tobytes()


def _blocks_for(model, family: str):
    if family == "tmg":
        return [model.pi, model.mu, model.phi, model.rho, model.psi]
    if family == "tca":
        return [model.mu, model.loadings, model.phi, model.rho, model.psi]
    if family == "mtca":
        return [model.pi, model.mu, model.loadings, model.phi, model.rho, model.psi]
    return [model.mu, model.phi, model.psi, model.pi_s, model.class_trans,
            model.motion.table]


def save_model(model, path) -> None:
    """Write a model file; the byte stream is canonical for a given model."""
    family = _family_of(model)
    ts = model.transforms
    lines = [f"{MAGIC} {VERSION}", f"family {family}",
             f"height {model.shape.height}", f"width {model.shape.width}"]
    if family in ("tmg", "mtca", "thmm"):
        lines.append(f"clusters {model.C}")
    if family in ("tca", "mtca"):
        lines.append(f"factors {model.K}")
        lines.append(f"fast {int(model.fast_likelihood)}")
    lines.append(f"boundary {ts.boundary}")
    lines.append("grid none" if ts.grid is None else f"grid {ts.grid[0]} {ts.grid[1]}")
    lines.append(f"kind {ts.kind}")
    lines.append(f"ops {ts.L}")
    param_width = 0 if ts.params is None else len(ts.params[0])
    lines.append(f"param_width {param_width}")
    if family == "thmm":
        m = model.motion
        lines.append(f"motion_mode {m.mode}")
        lines.append(f"motion_threshold {m.threshold!r}")
        lines.append(f"motion_per_class {int(m.per_class)}")
    lines.append("END")

    payload = bytearray(("\n".join(lines) + "\n").encode("ascii"))
    payload += _i64(ts.source_matrix)
    if param_width:
        payload += _f64(np.array(ts.params))
    for block in _blocks_for(model, family):
        payload += _f64(block)
    payload += struct.pack("<I", zlib.crc32(bytes(payload)))
    Path(path).write_bytes(bytes(payload))


def _take(buf: memoryview, count: int, dtype: str, shape) -> tuple[np.ndarray, memoryview]:
    width = np.dtype(dtype).itemsize
    need = count * width
    if len(buf) < need:
        raise ModelIOError("file truncated inside a parameter block")
    arr = np.frombuffer(buf[:need], dtype=dtype).reshape(shape).copy()
    return arr, buf[need:]


def load_model(path, family: str | None = None):
    """Read a model file back, verifying version, family and checksum."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise ModelIOError("file too short to hold a checksum")
    payload, tail = raw[:-4], raw[-4:]
    if struct.unpack("<I", tail)[0] != zlib.crc32(payload):
        raise ChecksumError("trailing checksum does not match the payload")

    end = payload.find(b"\nEND\n")
    if end < 0:
        raise ModelIOError("missing header terminator")
    header_text = payload[:end].decode("ascii")
    body = memoryview(payload[end + len(b"\nEND\n"):])

    lines = header_text.splitlines()
    magic = lines[0].split()
    if magic[0] != MAGIC:
        raise VersionError(f"not a {MAGIC} file")
    if int(magic[1]) != VERSION:
        raise VersionError(f"format version {magic[1]} not supported")
    fields = dict(line.split(maxsplit=1) for line in lines[1:])

    file_family = fields["family"]
    if file_family not in _FAMILIES:
        raise UnknownFamilyError(f"unknown family {file_family!r}")
    if family is not None and family != file_family:
        raise FamilyMismatchError(
            f"file holds a {file_family} model, caller asked for {family}")

    shape = ImageShape(int(fields["height"]), int(fields["width"]))
    n = shape.n
    L = int(fields["ops"])
    src, body = _take(body, L * n, "<i8", (L, n))
    grid = None if fields["grid"] == "none" else tuple(int(v) for v in fields["grid"].split())
    param_width = int(fields["param_width"])
    params = None
    if param_width:
        raw_params, body = _take(body, L * param_width, "<f8", (L, param_width))
        params = tuple(tuple(row) for row in raw_params)
    ops = tuple(TransformOp(row, shape) for row in src)
    ts = TransformationSet(ops, fields["boundary"], grid=grid, params=params,
                           kind=fields["kind"])

    if file_family == "tmg":
        C = int(fields["clusters"])
        pi, body = _take(body, C, "<f8", (C,))
        mu, body = _take(body, C * n, "<f8", (C, n))
        phi, body = _take(body, C * n, "<f8", (C, n))
        rho, body = _take(body, L * C, "<f8", (L, C))
        psi, body = _take(body, n, "<f8", (n,))
        return TmgModel(shape=shape, transforms=ts, pi=pi, mu=mu, phi=phi,
                        rho=rho, psi=psi)
    if file_family == "tca":
        K = int(fields["factors"])
        mu, body = _take(body, n, "<f8", (n,))
        loadings, body = _take(body, n * K, "<f8", (n, K))
        phi, body = _take(body, n, "<f8", (n,))
        rho, body = _take(body, L, "<f8", (L,))
        psi, body = _take(body, n, "<f8", (n,))
        return TcaModel(shape=shape, transforms=ts, mu=mu, loadings=loadings,
                        phi=phi, rho=rho, psi=psi,
                        fast_likelihood=bool(int(fields["fast"])))
    if file_family == "mtca":
        C, K = int(fields["clusters"]), int(fields["factors"])
        pi, body = _take(body, C, "<f8", (C,))
        mu, body = _take(body, C * n, "<f8", (C, n))
        loadings, body = _take(body, C * n * K, "<f8", (C, n, K))
        phi, body = _take(body, C * n, "<f8", (C, n))
        rho, body = _take(body, L * C, "<f8", (L, C))
        psi, body = _take(body, n, "<f8", (n,))
        return MtcaModel(shape=shape, transforms=ts, pi=pi, mu=mu,
                         loadings=loadings, phi=phi, rho=rho, psi=psi,
                         fast_likelihood=bool(int(fields["fast"])))

    C = int(fields["clusters"])
    mode = fields["motion_mode"]
    threshold = float(fields["motion_threshold"])
    per_class = bool(int(fields["motion_per_class"]))
    r = int(np.floor(threshold))
    bin_shape = (2 * r + 1, 2 * r + 1) if mode == "vector" else (r + 1,)
    table_shape = ((C,) + bin_shape) if per_class else bin_shape
    mu, body = _take(body, C * n, "<f8", (C, n))
    phi, body = _take(body, C * n, "<f8", (C, n))
    psi, body = _take(body, n, "<f8", (n,))
    pi_s, body = _take(body, C * L, "<f8", (C, L))
    class_trans, body = _take(body, C * C, "<f8", (C, C))
    table, body = _take(body, int(np.prod(table_shape)), "<f8", table_shape)
    motion = MotionPrior(mode=mode, threshold=threshold, table=table,
                         per_class=per_class)
    return ThmmModel(shape=shape, transforms=ts, mu=mu, phi=phi, psi=psi,
                     pi_s=pi_s, class_trans=class_trans, motion=motion)


def write_pgm(path, image, shape: ImageShape | None = None, maxval: int = 255) -> None:
    """Binary PGM (P5); intensities map linearly from [0, 1], clipped."""
    if maxval not in (255, 65535):
        raise ValueError("maxval must be 255 or 65535")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 1:
        if shape is None:
            raise ValueError("flat pixel vector needs an explicit shape")
        img = img.reshape(shape.height, shape.width)
    data = np.clip(np.rint(img * maxval), 0, maxval)
    dtype = ">u2" if maxval == 65535 else "u1"
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + data.astype(dtype).tobytes())


def read_pgm(path):
    """Read a binary PGM; returns (image in [0, 1], maxval)."""
    raw = Path(path).read_bytes()

    def fail(msg):
        raise ValueError(f"{path}: {msg}")

    pos = 0
    tokens = []
    while len(tokens) < 4:
        if pos >= len(raw):
            fail("truncated header")
        ch = raw[pos:pos + 1]
        if ch == b"#":
            pos = raw.find(b"\n", pos)
            if pos < 0:
                fail("unterminated comment")
            pos += 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(raw) and not raw[end:end + 1].isspace():
                end += 1
            tokens.append(raw[pos:end])
            pos = end
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        fail("not a binary PGM (P5)")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        fail("malformed header numbers")
    if maxval not in (255, 65535):
        fail(f"unsupported maxval {maxval}")
    dtype = ">u2" if maxval == 65535 else "u1"
    count = width * height
    need = count * np.dtype(dtype).itemsize
    if len(raw) - pos < need:
        fail("truncated pixel data")
    data = np.frombuffer(raw[pos:pos + need], dtype=dtype).astype(np.float64)
    return data.reshape(height, width) / maxval, maxval


def write_frames(frames, shape: ImageShape, directory, maxval: int = 255) -> None:
    """Frames as zero-padded frame_XXXX.pgm files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    for t, frame in enumerate(frames):
        write_pgm(directory / f"frame_{t:04d}.pgm", frame, shape, maxval)


def read_frames(directory):
    """Read every .pgm in a directory, ordered by filename.
    Returns (frames (T, n), ImageShape)."""
    directory = Path(directory)
    paths = sorted(directory.glob("*.pgm"))
    if not paths:
        raise ValueError(f"{directory}: no .pgm frames found")
    images = []
    shape = None
    for p in paths:
        img, _ = read_pgm(p)
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise ValueError(f"{p}: frame shape {img.shape} != first frame {shape}")
        images.append(img.reshape(-1))
    return np.stack(images), ImageShape(*shape)


def montage(images, shape: ImageShape, cols: int | None = None,
            pad: int = 1) -> np.ndarray:
    """Tile images into one grid image, min-max normalized to [0, 1]."""
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    count = images.shape[0]
    cols = count if cols is None else cols
    rows = -(-count // cols)
    lo, hi = images.min(), images.max()
    scaled = (images - lo) / (hi - lo) if hi > lo else np.zeros_like(images)
    h, w = shape.height, shape.width
    out = np.ones((rows * (h + pad) - pad, cols * (w + pad) - pad))
    for idx in range(count):
        r, c = divmod(idx, cols)
        out[r * (h + pad):r * (h + pad) + h,
            c * (w + pad):c * (w + pad) + w] = scaled[idx].reshape(h, w)
    return out
