import numpy as np
import pytest
from hypothesis import given, strategies as st

from ffpnet.errors import ParseError
from ffpnet.fileio import (
    colorize,
    default_palette,
    load_ffpt,
    read_manifest,
    read_palette,
    read_ppm,
    save_ffpt,
    save_tensor_dir,
    write_palette,
    write_ppm,
)


@given(st.sampled_from([np.float32, np.int32, np.uint8]), st.lists(st.integers(0, 4), min_size=0, max_size=4), st.integers(0, 99))
def test_ffpt_roundtrip(tmp_path_factory, dtype, shape, seed):
    arr = (np.random.default_rng(seed).normal(size=shape) * 50).astype(dtype)
    path = tmp_path_factory.mktemp("f") / "a.ffpt"
    save_ffpt(path, arr)
    back = load_ffpt(path)
    assert back.dtype == arr.dtype and back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_ffpt_errors(tmp_path):
    with pytest.raises(ParseError):
        save_ffpt(tmp_path / "x", np.zeros(2, np.float64))
    save_ffpt(tmp_path / "a", np.zeros((2, 3), np.float32))
    raw = (tmp_path / "a").read_bytes()
    (tmp_path / "b").write_bytes(raw[:12])
    with pytest.raises(ParseError, match="truncated header"):
        load_ffpt(tmp_path / "b")
    (tmp_path / "c").write_bytes(raw + b"\0")
    with pytest.raises(ParseError, match="25 bytes, expected 24"):
        load_ffpt(tmp_path / "c")
    (tmp_path / "d").write_bytes(raw[:8] + b"\x09" + raw[9:])
    with pytest.raises(ParseError, match="dtype code"):
        load_ffpt(tmp_path / "d")
    (tmp_path / "e").write_bytes(raw[:4] + b"\x02" + raw[5:])
    with pytest.raises(ParseError, match="version"):
        load_ffpt(tmp_path / "e")
    with pytest.raises(ParseError, match="expected int32"):
        load_ffpt(tmp_path / "a", np.int32)


def test_ppm_roundtrip_and_comments(tmp_path):
    rgb = np.random.default_rng(0).integers(0, 256, size=(3, 5, 3)).astype(np.uint8)
    write_ppm(tmp_path / "a.ppm", rgb)
    np.testing.assert_array_equal(read_ppm(tmp_path / "a.ppm"), rgb)
    (tmp_path / "b.ppm").write_bytes(b"P6\n# made by hand\n5 3\n255\n" + rgb.tobytes())
    np.testing.assert_array_equal(read_ppm(tmp_path / "b.ppm"), rgb)
    (tmp_path / "c.ppm").write_bytes(b"P3\n1 1\n255\n1 2 3\n")
    with pytest.raises(ParseError, match="P6"):
        read_ppm(tmp_path / "c.ppm")
    (tmp_path / "d.ppm").write_bytes(b"P6\n2 2\n255\n" + bytes(5))
    with pytest.raises(ParseError, match="expected 12"):
        read_ppm(tmp_path / "d.ppm")
    with pytest.raises(ParseError):
        write_ppm(tmp_path / "e.ppm", np.zeros((2, 2)))


def test_palette_roundtrip_and_colorize(tmp_path):
    pal = default_palette(20)
    assert len(pal) == 21 and len(set(pal.values())) == 21
    write_palette(tmp_path / "p.txt", pal)
    assert read_palette(tmp_path / "p.txt") == pal
    (tmp_path / "q.txt").write_text("# comment\n1 2 3 1\n\n1 2\n")
    with pytest.raises(ParseError, match="q.txt:4"):
        read_palette(tmp_path / "q.txt")
    img = colorize(np.array([[0, 1], [2, 3]]), pal)
    assert img.shape == (2, 2, 3) and tuple(img[0, 0]) == (0, 0, 0)


def test_tensor_dir_and_manifest(tmp_path):
    manifest = []
    arrays = {"a.weight": np.ones((2, 2)), "n": np.array([3], np.int32)}
    save_tensor_dir(tmp_path, arrays, "params", manifest)
    (tmp_path / "manifest.txt").write_text("\n".join(manifest) + "\n")
    back = read_manifest(tmp_path)
    assert back["a.weight"].dtype == np.float32 and back["n"].dtype == np.int32
    (tmp_path / "params" / "n.ffpt").unlink()
    with pytest.raises(ParseError, match="missing file"):
        read_manifest(tmp_path)
    with pytest.raises(ParseError, match="no manifest"):
        read_manifest(tmp_path / "params")
