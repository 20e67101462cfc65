"""
Graybox NLP - Reference Image Tests
"""

import struct

import numpy as np
import pytest

from graybox.errors import InputFileError, PixelRangeError
from graybox.problems.images import load_reference_input, save_image_csv


def write_idx(path, pixels: np.ndarray, count: int = 2) -> None:
    """Images file: magic 0x00000803, dims (count, rows, cols), ubyte payload."""
    rows, cols = pixels.shape
    header = struct.pack(">4B3I", 0, 0, 0x08, 3, count, rows, cols)
    payload = np.tile(pixels.astype(np.uint8).reshape(-1), count).tobytes()
    path.write_bytes(header + payload)


class TestCsvInput:
    """Comma-separated pixel files."""

    def test_single_row(self, tmp_path):
        path = tmp_path / "ref.csv"
        path.write_text("0,0.5,1\n")
        np.testing.assert_array_equal(load_reference_input(path), [0.0, 0.5, 1.0])

    def test_rows_are_concatenated(self, tmp_path):
        path = tmp_path / "ref.csv"
        path.write_text("0.1, 0.2\n0.3, 0.4\n\n")
        np.testing.assert_allclose(load_reference_input(path), [0.1, 0.2, 0.3, 0.4])

    def test_out_of_range_pixel(self, tmp_path):
        path = tmp_path / "ref.csv"
        path.write_text("0.2,1.5,0.3\n")
        with pytest.raises(PixelRangeError):
            load_reference_input(path)

    def test_non_finite_pixel(self, tmp_path):
        path = tmp_path / "ref.csv"
        path.write_text("0.2,nan\n")
        with pytest.raises(PixelRangeError):
            load_reference_input(path)

    def test_not_a_number(self, tmp_path):
        path = tmp_path / "ref.csv"
        path.write_text("0.2,dark\n")
        with pytest.raises(InputFileError):
            load_reference_input(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "ref.csv"
        path.write_text("")
        with pytest.raises(InputFileError):
            load_reference_input(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputFileError):
            load_reference_input(tmp_path / "absent.csv")

    def test_save_then_load(self, tmp_path):
        x = np.random.default_rng(0).uniform(0.0, 1.0, 16)
        path = tmp_path / "adv.csv"
        save_image_csv(x, path)
        np.testing.assert_array_equal(load_reference_input(path), x)


class TestIdxInput:
    """IDX ubyte image files."""

    def test_first_image_scaled(self, tmp_path):
        pixels = np.arange(784).reshape(28, 28) % 256
        path = tmp_path / "images.idx3-ubyte"
        write_idx(path, pixels)
        x = load_reference_input(path)
        assert x.shape == (784,)
        np.testing.assert_allclose(x, pixels.reshape(-1) / 255.0)
        assert x.min() == 0.0 and x.max() == 1.0

    def test_single_image_file(self, tmp_path):
        path = tmp_path / "one.idx"
        path.write_bytes(struct.pack(">4B2I", 0, 0, 0x08, 2, 2, 2) + bytes([0, 51, 102, 255]))
        np.testing.assert_allclose(load_reference_input(path), [0.0, 0.2, 0.4, 1.0])

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "cut.idx"
        path.write_bytes(struct.pack(">4B3I", 0, 0, 0x08, 3, 1, 28, 28) + bytes(100))
        with pytest.raises(InputFileError):
            load_reference_input(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "cut.idx"
        path.write_bytes(bytes([0, 0, 0x08, 3, 0, 0]))
        with pytest.raises(InputFileError):
            load_reference_input(path)
