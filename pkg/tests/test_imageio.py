"""Image serialization: PPM round-trips, minimal PNG validity, conversions."""

import struct
import zlib

import numpy as np
import pytest

from xing import imageio
from xing.tensor import ShapeError, Tensor


class TestByteConversion:
    def test_range_endpoints_map_to_0_and_255(self):
        img = np.stack([np.full((2, 3), -1.0),
                        np.full((2, 3), 1.0),
                        np.zeros((2, 3))])
        out = imageio.to_bytes_rgb(img)
        assert out.shape == (2, 3, 3)
        assert out.dtype == np.uint8
        assert np.all(out[:, :, 0] == 0)
        assert np.all(out[:, :, 1] == 255)
        assert np.all(out[:, :, 2] == 128)  # round(0.5 * 255)

    def test_out_of_range_values_clip(self):
        img = np.stack([np.full((2, 2), -9.0),
                        np.full((2, 2), 9.0),
                        np.zeros((2, 2))])
        out = imageio.to_bytes_rgb(img)
        assert np.all(out[:, :, 0] == 0)
        assert np.all(out[:, :, 1] == 255)

    def test_accepts_tensor_and_grayscale(self):
        t = Tensor(np.zeros((4, 5)))
        out = imageio.to_bytes_rgb(t)
        assert out.shape == (4, 5, 3)

    def test_rejects_bad_rank(self):
        with pytest.raises(ShapeError):
            imageio.to_bytes_rgb(np.zeros((2, 3, 4, 5)))
        with pytest.raises(ShapeError):
            imageio.to_bytes_rgb(np.zeros((4, 3, 3)))  # channels must lead

    def test_gray_to_rgb_rescales_unit_to_signed(self):
        grid = np.array([[0.0, 0.5], [1.0, 2.0]])
        out = imageio.gray_to_rgb(grid)
        assert out.shape == (3, 2, 2)
        want = np.array([[-1.0, 0.0], [1.0, 1.0]])  # 2.0 clips to 1
        for ch in range(3):
            np.testing.assert_allclose(out[ch], want, atol=1e-15)

    def test_heatmap_overview_is_max_projection(self):
        maps = np.zeros((2, 4, 4))
        maps[0, 1, 2] = 1.0
        maps[1, 3, 0] = 0.5
        out = imageio.heatmap_overview(maps)
        assert out.shape == (3, 4, 4)
        assert out[0, 1, 2] == pytest.approx(1.0)
        assert out[0, 3, 0] == pytest.approx(0.0)  # 0.5 in unit -> 0 signed
        assert out[0, 0, 0] == pytest.approx(-1.0)


class TestPpm:
    def test_header_and_payload_layout(self, tmp_path):
        path = tmp_path / "img.ppm"
        imageio.write_ppm(path, np.zeros((3, 8, 5)))
        raw = path.read_bytes()
        assert raw.startswith(b"P6\n5 8\n255\n")
        assert len(raw) == len(b"P6\n5 8\n255\n") + 8 * 5 * 3

    def test_roundtrip_is_exact_on_quantized_values(self, tmp_path):
        rng = np.random.default_rng(11)
        levels = rng.integers(0, 256, size=(3, 9, 7))
        img = levels / 255.0 * 2.0 - 1.0
        path = tmp_path / "img.ppm"
        imageio.write_ppm(path, img)
        back = imageio.read_ppm(path)
        assert np.array_equal(back, img)

    def test_read_skips_header_comments(self, tmp_path):
        pixels = bytes(range(2 * 2 * 3))
        path = tmp_path / "commented.ppm"
        path.write_bytes(b"P6\n# made by hand\n2 # width\n2\n255\n" + pixels)
        back = imageio.read_ppm(path)
        assert back.shape == (3, 2, 2)
        want = np.frombuffer(pixels, dtype=np.uint8).reshape(2, 2, 3)
        assert np.array_equal(back, want.transpose(2, 0, 1) / 255.0 * 2.0 - 1.0)

    def test_read_rejects_other_formats(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P3\n1 1\n255\n0 0 0\n")
        with pytest.raises(ValueError):
            imageio.read_ppm(path)


class TestPng:
    @staticmethod
    def _parse_chunks(raw):
        assert raw[:8] == b"\x89PNG\r\n\x1a\n"
        chunks, pos = [], 8
        while pos < len(raw):
            (length,) = struct.unpack(">I", raw[pos:pos + 4])
            tag = raw[pos + 4:pos + 8]
            payload = raw[pos + 8:pos + 8 + length]
            (crc,) = struct.unpack(">I", raw[pos + 8 + length:pos + 12 + length])
            assert crc == zlib.crc32(tag + payload), f"bad crc in {tag!r}"
            chunks.append((tag, payload))
            pos += 12 + length
        return chunks

    def test_structure_and_pixel_recovery(self, tmp_path):
        rng = np.random.default_rng(5)
        img = rng.uniform(-1.0, 1.0, size=(3, 6, 4))
        path = tmp_path / "img.png"
        imageio.write_png(path, img)
        chunks = self._parse_chunks(path.read_bytes())
        tags = [t for t, _ in chunks]
        assert tags == [b"IHDR", b"IDAT", b"IEND"]
        w, h, depth, color, comp, filt, interlace = struct.unpack(
            ">IIBBBBB", chunks[0][1])
        assert (w, h, depth, color, comp, filt, interlace) == (4, 6, 8, 2, 0, 0, 0)
        scan = zlib.decompress(chunks[1][1])
        assert len(scan) == h * (1 + 3 * w)
        rows = np.frombuffer(scan, dtype=np.uint8).reshape(h, 1 + 3 * w)
        assert np.all(rows[:, 0] == 0)  # filter type None on every scanline
        pixels = rows[:, 1:].reshape(h, w, 3)
        assert np.array_equal(pixels, imageio.to_bytes_rgb(img))

    def test_write_image_emits_optional_sibling(self, tmp_path):
        img = np.zeros((3, 4, 4))
        base = tmp_path / "frame.ppm"
        imageio.write_image(base, img)
        assert base.exists() and not base.with_suffix(".png").exists()
        imageio.write_image(base, img, png=True)
        assert base.with_suffix(".png").exists()
