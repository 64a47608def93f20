"""FB01 raster container and SG01 distance-grid container."""

import numpy as np
import pytest

from relightkit.errors import FileFormatError, PreconditionError
from relightkit.fb import read_fb, write_fb, read_sdf_grid, write_sdf_grid
from relightkit.geometry import SdfGrid


def test_fb_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.standard_normal((5, 7, 3)).astype(np.float32)
    p = tmp_path / "a.fb"
    write_fb(p, img)
    back = read_fb(p)
    assert back.dtype == np.float32
    np.testing.assert_array_equal(back, img)


def test_fb_header_layout(tmp_path):
    p = tmp_path / "a.fb"
    write_fb(p, np.zeros((2, 3, 4)))
    raw = p.read_bytes()
    assert raw[:4] == b"FB01"
    assert np.frombuffer(raw[4:16], dtype="<u4").tolist() == [3, 2, 4]
    assert len(raw) == 16 + 2 * 3 * 4 * 4


def test_fb_2d_promoted_to_one_channel(tmp_path):
    p = tmp_path / "a.fb"
    write_fb(p, np.ones((4, 6)))
    assert read_fb(p).shape == (4, 6, 1)


def test_fb_rejects_non_finite(tmp_path):
    with pytest.raises(PreconditionError, match="finite"):
        write_fb(tmp_path / "a.fb", np.array([[np.nan]]))


def test_fb_bad_magic(tmp_path):
    p = tmp_path / "a.fb"
    write_fb(p, np.zeros((2, 2, 1)))
    p.write_bytes(b"XX99" + p.read_bytes()[4:])
    with pytest.raises(FileFormatError, match="magic"):
        read_fb(p)


def test_fb_truncated_payload_reports_counts(tmp_path):
    p = tmp_path / "a.fb"
    write_fb(p, np.zeros((2, 2, 2)))
    raw = p.read_bytes()
    p.write_bytes(raw[:-5])
    with pytest.raises(FileFormatError,
                       match=r"expected 32 bytes, got 27"):
        read_fb(p)


def test_fb_trailing_data_rejected(tmp_path):
    p = tmp_path / "a.fb"
    write_fb(p, np.zeros((2, 2, 1)))
    p.write_bytes(p.read_bytes() + b"\x00")
    with pytest.raises(FileFormatError, match="trailing"):
        read_fb(p)


def test_fb_truncated_header(tmp_path):
    p = tmp_path / "a.fb"
    p.write_bytes(b"FB01\x01\x00")
    with pytest.raises(FileFormatError, match="header"):
        read_fb(p)


def test_sg_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    grid = SdfGrid(bounds_min=[-1.0, -2.0, 0.5],
                   bounds_max=[1.5, 2.0, 3.0],
                   values=rng.standard_normal((5, 4, 6)))
    p = tmp_path / "g.sg"
    write_sdf_grid(p, grid)
    back = read_sdf_grid(p)
    np.testing.assert_array_equal(back.values, grid.values)
    np.testing.assert_array_equal(back.bounds_min, grid.bounds_min)
    np.testing.assert_array_equal(back.bounds_max, grid.bounds_max)


def test_sg_truncated(tmp_path):
    grid = SdfGrid(bounds_min=[0, 0, 0], bounds_max=[1, 1, 1],
                   values=np.zeros((3, 3, 3)))
    p = tmp_path / "g.sg"
    write_sdf_grid(p, grid)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(FileFormatError, match="expected 216 bytes, got 208"):
        read_sdf_grid(p)
