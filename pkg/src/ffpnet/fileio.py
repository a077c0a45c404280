"""On-disk formats: FFPT binary tensors, P6 pixmaps, palettes, and
parameter manifests.

FFPT layout (little-endian): b"FFPT", u32 version (=1), u8 dtype code
(0 f32, 1 i32, 2 u8), u8 rank, rank x u64 extents, row-major payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ParseError

MAGIC = b"FFPT"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<i4"), 2: np.dtype("u1")}
CODES = {np.dtype(np.float32): 0, np.dtype(np.int32): 1, np.dtype(np.uint8): 2}


def save_ffpt(path: str | Path, array: np.ndarray) -> None:
    array = np.asarray(array)
    if array.dtype not in CODES:
        raise ParseError(f"FFPT stores f32, i32 or u8, not {array.dtype}")
    code = CODES[array.dtype]
    header = MAGIC + struct.pack("<IBB", VERSION, code, array.ndim) + struct.pack(f"<{array.ndim}Q", *array.shape)
    payload = np.ascontiguousarray(array, dtype=DTYPES[code]).tobytes()
    Path(path).write_bytes(header + payload)


def load_ffpt(path: str | Path, expect_dtype=None) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise ParseError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 10:
        raise ParseError(f"{path}: truncated header")
    version, code, rank = struct.unpack_from("<IBB", raw, 4)
    if version != VERSION:
        raise ParseError(f"{path}: unsupported FFPT version {version}")
    if code not in DTYPES:
        raise ParseError(f"{path}: unknown dtype code {code}")
    offset = 10 + 8 * rank
    if len(raw) < offset:
        raise ParseError(f"{path}: truncated header")
    shape = struct.unpack_from(f"<{rank}Q", raw, 10)
    dtype = DTYPES[code]
    if expect_dtype is not None and dtype != np.dtype(expect_dtype):
        raise ParseError(f"{path}: dtype {dtype}, expected {np.dtype(expect_dtype)}")
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    actual = len(raw) - offset
    if actual != expected:
        raise ParseError(f"{path}: payload has {actual} bytes, expected {expected} for shape {shape}")
    return np.frombuffer(raw, dtype=dtype, offset=offset).reshape(shape).astype(dtype.newbyteorder("="))


# ----------------------------------------------------------------- pixmaps


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ParseError(f"PPM needs an H x W x 3 array, got {rgb.shape}")
    h, w, _ = rgb.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + rgb.astype(np.uint8).tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    """Binary P6 with maxval 255 -> H x W x 3 uint8."""
    path = Path(path)
    raw = path.read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError(f"{path}: truncated PPM header")
        tokens.append(raw[start:pos])
    pos += 1
    if tokens[0] != b"P6":
        raise ParseError(f"{path}: not a binary P6 pixmap")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ParseError(f"{path}: only maxval 255 is supported")
    need = w * h * 3
    if len(raw) - pos < need:
        raise ParseError(f"{path}: payload has {len(raw) - pos} bytes, expected {need}")
    return np.frombuffer(raw, dtype=np.uint8, count=need, offset=pos).reshape(h, w, 3).copy()


def read_palette(path: str | Path) -> dict[tuple[int, int, int], int]:
    """Lines of ``R G B class_id``; blank lines and ``#`` comments ignored."""
    palette = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ParseError(f"{path}:{lineno}: expected 'R G B class_id'")
        r, g, b, cid = (int(p) for p in parts)
        palette[(r, g, b)] = cid
    return palette


def write_palette(path: str | Path, palette: dict[tuple[int, int, int], int]) -> None:
    lines = [f"{r} {g} {b} {cid}" for (r, g, b), cid in sorted(palette.items(), key=lambda kv: kv[1])]
    Path(path).write_text("\n".join(lines) + "\n")


def default_palette(num_classes: int) -> dict[tuple[int, int, int], int]:
    """Deterministic, distinct colours for classes 1..K (0 is black)."""
    base = [
        (255, 255, 255), (0, 0, 255), (0, 255, 255), (0, 255, 0), (255, 255, 0), (255, 0, 0),
        (255, 0, 255), (128, 0, 0), (0, 128, 0), (0, 0, 128), (128, 128, 0), (128, 0, 128),
        (0, 128, 128), (192, 192, 192), (255, 128, 0), (128, 255, 0),
    ]
    palette = {(0, 0, 0): 0}
    for k in range(1, num_classes + 1):
        if k <= len(base):
            colour = base[k - 1]
        else:
            colour = ((37 * k) % 256, (91 * k) % 256, (173 * k) % 256)
        palette[colour] = k
    return palette


def colorize(labels: np.ndarray, palette: dict[tuple[int, int, int], int]) -> np.ndarray:
    lut = np.zeros((max(palette.values()) + 1, 3), dtype=np.uint8)
    for colour, cid in palette.items():
        lut[cid] = colour
    return lut[np.asarray(labels)]


# ----------------------------------------------------------------- parameter directories


def save_tensor_dir(root: str | Path, arrays: dict[str, np.ndarray], subdir: str, manifest: list[str]) -> None:
    """Write ``arrays`` as ``root/subdir/<name>.ffpt`` and append
    ``name path`` lines to ``manifest``."""
    root = Path(root)
    (root / subdir).mkdir(parents=True, exist_ok=True)
    for name, arr in arrays.items():
        rel = f"{subdir}/{name}.ffpt"
        arr = np.asarray(arr)
        if arr.dtype.kind == "f":
            arr = arr.astype(np.float32)
        save_ffpt(root / rel, arr)
        manifest.append(f"{name} {rel}")


def read_manifest(root: str | Path) -> dict[str, np.ndarray]:
    root = Path(root)
    path = root / "manifest.txt"
    if not path.exists():
        raise ParseError(f"{root}: no manifest.txt")
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"{path}:{lineno}: expected 'name path'")
        name, rel = parts
        if not (root / rel).exists():
            raise ParseError(f"{path}:{lineno}: missing file {rel} for {name}")
        out[name] = load_ffpt(root / rel)
    return out
