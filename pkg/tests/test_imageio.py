import numpy as np
import pytest

from pnpkit import ImageFormatError, SeededRng, read_image, write_image
from pnpkit.imageio import read_pgm, read_rawf64, write_pgm, write_rawf64


@pytest.mark.parametrize("shape", [(7,), (5, 9), (3, 4, 5)])
def test_rawf64_roundtrip_bitwise(tmp_path, shape):
    img = SeededRng(0).normal(shape) * 1e3
    path = tmp_path / "img.rawf64"
    write_rawf64(path, img)
    back = read_rawf64(path)
    assert back.shape == shape and back.dtype == np.float64
    np.testing.assert_array_equal(back, img)
    assert (tmp_path / "img.rawf64.json").read_text() == '{"shape": ' + str(list(shape)) + ', "dtype": "f64le"}'


def test_rawf64_is_little_endian_row_major(tmp_path):
    img = np.array([[1.0, 2.0], [3.0, 4.0]])
    path = tmp_path / "a.raw"
    write_image(path, img)
    assert path.read_bytes() == np.array([1.0, 2.0, 3.0, 4.0], dtype="<f8").tobytes()


@pytest.mark.parametrize("maxval,binary", [(255, True), (255, False), (65535, True), (1000, False)])
def test_pgm_roundtrip_quantization(tmp_path, maxval, binary):
    img = SeededRng(1).uniform((11, 13))
    path = tmp_path / "img.pgm"
    write_pgm(path, img, maxval=maxval, binary=binary)
    back = read_image(path)
    assert back.shape == img.shape
    assert np.max(np.abs(back - img)) <= 1.0 / (2 * maxval) + 1e-15


def test_pgm_p5_byte_layout(tmp_path):
    path = tmp_path / "t.pgm"
    write_pgm(path, np.array([[0.0, 1.0, 0.5]]))
    assert path.read_bytes() == b"P5\n3 1\n255\n" + bytes([0, 255, 128])
    write_pgm(path, np.array([[1.0]]), maxval=65535)
    assert path.read_bytes().endswith(b"\xff\xff")


def test_pgm_header_comments_accepted(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P2\n# made by hand\n2 2 # inline\n4\n0 1\n2 4\n")
    np.testing.assert_array_equal(read_pgm(path), [[0.0, 0.25], [0.5, 1.0]])


def test_pgm_wrong_magic(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
    with pytest.raises(ImageFormatError) as info:
        read_pgm(path)
    assert info.value.offset == 0
    assert "magic" in str(info.value)


def test_pgm_truncated_raster_reports_offset(tmp_path):
    path = tmp_path / "short.pgm"
    path.write_bytes(b"P5\n4 4\n255\n" + bytes(10))
    with pytest.raises(ImageFormatError, match="truncated") as info:
        read_pgm(path)
    assert info.value.offset == len(path.read_bytes())


def test_pgm_bad_token_and_truncated_header(tmp_path):
    path = tmp_path / "tok.pgm"
    path.write_bytes(b"P2\n2 x\n255\n")
    with pytest.raises(ImageFormatError, match="integer") as info:
        read_pgm(path)
    assert info.value.offset is not None
    path.write_bytes(b"P5\n2 2")
    with pytest.raises(ImageFormatError, match="truncated header"):
        read_pgm(path)


def test_pgm_sample_over_maxval(tmp_path):
    path = tmp_path / "over.pgm"
    path.write_bytes(b"P2\n1 1\n3\n7\n")
    with pytest.raises(ImageFormatError, match="maxval"):
        read_pgm(path)


def test_rawf64_errors(tmp_path):
    path = tmp_path / "x.rawf64"
    write_rawf64(path, np.zeros((2, 3)))
    path.write_bytes(bytes(40))
    with pytest.raises(ImageFormatError, match="expected 48 bytes"):
        read_rawf64(path)
    (tmp_path / "x.rawf64.json").write_text("{")
    with pytest.raises(ImageFormatError, match="sidecar"):
        read_rawf64(path)


def test_format_inference():
    with pytest.raises(ValueError):
        read_image("image.png")
    with pytest.raises(ValueError):
        write_pgm("unused.pgm", np.zeros((2, 2, 2)))
