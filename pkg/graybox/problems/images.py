"""
Graybox NLP - Reference Images
Read reference inputs from CSV or IDX files and write images back as CSV.
"""

import csv
import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np

from ..errors import InputFileError, PixelRangeError
from ..linalg import RealVec

logger = logging.getLogger(__name__)

# IDX magic: two zero bytes, data-type code, number of dimensions.
IDX_UBYTE = 0x08


def _is_idx(data: bytes) -> bool:
    return len(data) >= 4 and data[0] == 0 and data[1] == 0 and data[2] == IDX_UBYTE


def _read_idx(data: bytes, path: Path) -> RealVec:
    ndim = data[3]
    if ndim < 1:
        raise InputFileError(f"{path}: IDX file declares no dimensions")
    header = 4 + 4 * ndim
    if len(data) < header:
        raise InputFileError(f"{path}: IDX header is cut off")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    # an images file holds a leading count; take its first image
    pixels = int(np.prod(dims[1:])) if ndim == 3 else int(np.prod(dims))
    if len(data) < header + pixels:
        raise InputFileError(f"{path}: IDX payload holds {len(data) - header} bytes, "
                             f"needs {pixels}")
    raw = np.frombuffer(data, dtype=np.uint8, count=pixels, offset=header)
    return raw.astype(np.float64) / 255.0


def _read_csv(text: str, path: Path) -> RealVec:
    values: list[float] = []
    for row in csv.reader(text.splitlines()):
        for cell in row:
            cell = cell.strip()
            if not cell:
                continue
            try:
                values.append(float(cell))
            except ValueError as exc:
                raise InputFileError(f"{path}: '{cell}' is not a number") from exc
    if not values:
        raise InputFileError(f"{path}: no pixel values found")
    return np.array(values, dtype=np.float64)


def load_reference_input(path: Union[str, Path]) -> RealVec:
    """
    Pixel vector from a CSV file (rows are concatenated) or an IDX ubyte file.

    Out-of-range values raise PixelRangeError; nothing is clamped.
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise InputFileError(f"cannot read {path}: {exc}") from exc

    if _is_idx(data):
        pixels = _read_idx(data, path)
    else:
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise InputFileError(f"{path}: neither IDX nor UTF-8 CSV") from exc
        pixels = _read_csv(text, path)

    if not np.all(np.isfinite(pixels)):
        raise PixelRangeError(f"{path}: non-finite pixel value")
    bad = np.flatnonzero((pixels < 0.0) | (pixels > 1.0))
    if bad.size:
        raise PixelRangeError(
            f"{path}: pixel {bad[0]} = {pixels[bad[0]]:g} outside [0, 1] ({bad.size} total)"
        )
    logger.debug("[ADVERSARIAL] loaded %d pixels from %s", pixels.size, path)
    return pixels


def save_image_csv(x, path: Union[str, Path]) -> None:
    """Write pixels as one CSV row with round-trip float formatting."""
    values = np.asarray(x, dtype=np.float64).reshape(-1)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        csv.writer(handle).writerow([repr(float(v)) for v in values])
