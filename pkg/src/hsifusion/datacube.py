"""Image cubes and their on-disk format.

A cube file is a two-line text header followed by the raw payload:

    HSICUBE 1
    {"bands": 31, "height": 512, "width": 512, "dtype": "f32",
     "interleave": "band-sequential", "value_range": [0.0, 1.0],
     "wavelengths_nm": [...]}          <- single JSON line, wavelengths optional
    <bands * height * width little-endian float32 values, band-major>

The format is deliberately minimal: endian-pinned, lossless for 32-bit data,
and byte-countable from the header alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

MAGIC_LINE = b"HSICUBE 1\n"


class CubeFormatError(ValueError):
    """Raised for malformed cube files."""


@dataclass
class HsiCube:
    """Band-major image cube (bands, height, width) with value-range metadata."""

    data: np.ndarray
    value_range: tuple[float, float] = (0.0, 1.0)
    wavelengths_nm: list[float] | None = None
    name: str | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError(f"cube data must be 3-D (bands, H, W), got {self.data.shape}")
        lo, hi = self.value_range
        if not lo < hi:
            raise ValueError(f"value_range must satisfy lo < hi, got {self.value_range}")
        self.value_range = (float(lo), float(hi))
        if self.wavelengths_nm is not None:
            self.wavelengths_nm = [float(v) for v in self.wavelengths_nm]
            if len(self.wavelengths_nm) != self.bands:
                raise ValueError(
                    f"{len(self.wavelengths_nm)} wavelengths for {self.bands} bands"
                )

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def as_cube_array(x) -> np.ndarray:
    """Accept an HsiCube or a bare (bands, H, W) array."""
    arr = x.data if isinstance(x, HsiCube) else np.asarray(x)
    if arr.ndim != 3:
        raise ValueError(f"expected a (bands, H, W) cube, got shape {arr.shape}")
    return arr


def write_cube(path, cube: HsiCube) -> None:
    data = np.ascontiguousarray(cube.data, dtype="<f4")
    if not np.all(np.isfinite(data)):
        raise CubeFormatError("cube contains non-finite values; refusing to write")
    header = {
        "bands": cube.bands,
        "height": cube.height,
        "width": cube.width,
        "dtype": "f32",
        "interleave": "band-sequential",
        "value_range": list(cube.value_range),
    }
    if cube.wavelengths_nm is not None:
        header["wavelengths_nm"] = cube.wavelengths_nm
    with open(path, "wb") as fh:
        fh.write(MAGIC_LINE)
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(data.tobytes())


def read_cube(path) -> HsiCube:
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != MAGIC_LINE:
            raise CubeFormatError(f"{path}: bad magic line {magic!r}")
        try:
            header = json.loads(fh.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CubeFormatError(f"{path}: unreadable header: {exc}") from None
        for req in ("bands", "height", "width", "dtype", "interleave", "value_range"):
            if req not in header:
                raise CubeFormatError(f"{path}: header missing field '{req}'")
        if header["dtype"] != "f32":
            raise CubeFormatError(f"{path}: unsupported dtype '{header['dtype']}'")
        if header["interleave"] != "band-sequential":
            raise CubeFormatError(f"{path}: unsupported interleave '{header['interleave']}'")
        bands, h, w = int(header["bands"]), int(header["height"]), int(header["width"])
        expected = bands * h * w * 4
        payload = fh.read()
        if len(payload) != expected:
            raise CubeFormatError(
                f"{path}: payload holds {len(payload)} bytes, header implies {expected}"
            )
    data = np.frombuffer(payload, dtype="<f4").reshape(bands, h, w).copy()
    if not np.all(np.isfinite(data)):
        raise CubeFormatError(f"{path}: payload contains non-finite values")
    return HsiCube(
        data,
        value_range=tuple(header["value_range"]),
        wavelengths_nm=header.get("wavelengths_nm"),
    )
