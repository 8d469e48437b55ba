"""Core raster type, seeded counter-based random streams, and the .xri file format.

Images are stored on disk as raw little-endian float32 (`<name>.f32`) with a
JSON sidecar (`<name>.json`) describing dimensions, pixel pitch and role.
In memory everything is float64.

Random streams are counter-based (Philox) and keyed by
(master_seed, stream_index), so any stream can be recreated independently of
draw order elsewhere.  Normal variates use numpy's ziggurat; Poisson variates
are drawn exactly below a configurable rate threshold (default 1e4) and by a
rounded Gaussian approximation above it.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_POISSON_EXACT_THRESHOLD = 1.0e4


@dataclass(frozen=True)
class ImageGrid:
    """2D float raster with a physical pixel pitch.

    data is row-major (height, width) float64; all values must be finite.
    Instances are immutable after construction.
    """

    data: np.ndarray
    pitch_mm: float = 1.0

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"image data must be 2D and non-empty, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image data contains non-finite values")
        if not self.pitch_mm > 0:
            raise ValueError(f"pitch_mm must be positive, got {self.pitch_mm}")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def with_data(self, data: np.ndarray) -> "ImageGrid":
        """New grid with the same pitch and different pixel values."""
        return ImageGrid(data, self.pitch_mm)

    def __eq__(self, other):
        if not isinstance(other, ImageGrid):
            return NotImplemented
        return self.pitch_mm == other.pitch_mm and np.array_equal(self.data, other.data)


@dataclass(frozen=True)
class BinaryMask:
    """Boolean raster annotating an ImageGrid of the same dimensions."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=bool)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"mask data must be 2D and non-empty, got shape {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def count(self) -> int:
        return int(self.data.sum())

    def matches(self, grid) -> bool:
        return (self.height, self.width) == (grid.height, grid.width)

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return np.array_equal(self.data, other.data)


@dataclass(frozen=True)
class SeedSpec:
    """Key of a reproducible random stream.

    Distinct (master_seed, stream_index) pairs give independent streams;
    identical pairs reproduce bit-identical draws.
    """

    master_seed: int
    stream_index: int = 0

    def __post_init__(self):
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must fit in 64 unsigned bits")
        if not 0 <= self.stream_index < 2**64:
            raise ValueError("stream_index must fit in 64 unsigned bits")

    def sub(self, label) -> "SeedSpec":
        """Derive a child stream keyed by an arbitrary label.

        Hash-based, so substreams of different parents or labels never collide
        by index arithmetic accidents.
        """
        h = hashlib.blake2b(digest_size=8)
        h.update(struct.pack("<QQ", self.master_seed, self.stream_index))
        h.update(repr(label).encode())
        return SeedSpec(self.master_seed, int.from_bytes(h.digest(), "little"))


def derive_stream(seed: SeedSpec) -> np.random.Generator:
    """Counter-based generator for the given stream key."""
    key = (seed.master_seed << 64) | seed.stream_index
    return np.random.Generator(np.random.Philox(key=key))


def sample_poisson(rng: np.random.Generator, lam,
                   exact_threshold: float = DEFAULT_POISSON_EXACT_THRESHOLD) -> np.ndarray:
    """Poisson draws: exact for lam <= exact_threshold, rounded Gaussian above.

    Draw order is fixed (exact block first, then the Gaussian block), so the
    output depends only on (rng state, lam).
    """
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam < 0):
        raise ValueError("Poisson rate must be non-negative")
    out = np.empty_like(lam)
    small = lam <= exact_threshold
    out[small] = rng.poisson(lam[small])
    big = ~small
    n_big = int(big.sum())
    if n_big:
        approx = lam[big] + np.sqrt(lam[big]) * rng.standard_normal(n_big)
        out[big] = np.maximum(np.round(approx), 0.0)
    return out


def _xri_paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".f32", ".json"):
        p = p.with_suffix("")
    return p.with_suffix(".f32"), p.with_suffix(".json")


def write_image(grid: ImageGrid, path, role: str = "image", extra: dict | None = None) -> None:
    """Write a grid as .f32 raw payload + .json sidecar (byte-deterministic).

    `path` may be the stem or either component file.  `extra` fields are
    merged into the sidecar (provenance etc.); they must be JSON-serializable.
    """
    raw_path, meta_path = _xri_paths(path)
    payload = grid.data.astype("<f4")
    if not np.all(np.isfinite(payload)):
        raise ValueError("values do not fit in float32")
    meta = {
        "width": grid.width,
        "height": grid.height,
        "pitch_mm": grid.pitch_mm,
        "dtype": "f32",
        "role": role,
    }
    if extra:
        overlap = set(extra) & set(meta)
        if overlap:
            raise ValueError(f"extra sidecar fields shadow required ones: {sorted(overlap)}")
        meta.update(extra)
    payload.tofile(raw_path)
    meta_path.write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")


def read_sidecar(path) -> dict:
    _, meta_path = _xri_paths(path)
    if not meta_path.exists():
        raise FileNotFoundError(meta_path)
    meta = json.loads(meta_path.read_text())
    for field_name in ("width", "height", "pitch_mm", "dtype", "role"):
        if field_name not in meta:
            raise ValueError(f"{meta_path}: sidecar missing field {field_name!r}")
    if meta["dtype"] != "f32":
        raise ValueError(f"{meta_path}: unsupported dtype {meta['dtype']!r}")
    if not (isinstance(meta["width"], int) and isinstance(meta["height"], int)
            and meta["width"] > 0 and meta["height"] > 0):
        raise ValueError(f"{meta_path}: invalid dimensions")
    return meta


def read_image(path) -> ImageGrid:
    """Read an .xri image; lossless round-trip with write_image."""
    raw_path, meta_path = _xri_paths(path)
    meta = read_sidecar(path)
    payload = np.fromfile(raw_path, dtype="<f4")
    expected = meta["width"] * meta["height"]
    if payload.size != expected:
        raise ValueError(
            f"{raw_path}: payload has {payload.size} values, header declares {expected}")
    if not np.all(np.isfinite(payload)):
        raise ValueError(f"{raw_path}: payload contains non-finite values")
    data = payload.astype(np.float64).reshape(meta["height"], meta["width"])
    return ImageGrid(data, meta["pitch_mm"])


def write_mask(mask: BinaryMask, path, pitch_mm: float = 1.0, extra: dict | None = None) -> None:
    grid = ImageGrid(mask.data.astype(np.float64), pitch_mm)
    write_image(grid, path, role="mask", extra=extra)


def read_mask(path) -> BinaryMask:
    meta = read_sidecar(path)
    if meta["role"] != "mask":
        raise ValueError(f"{path}: sidecar role is {meta['role']!r}, expected 'mask'")
    grid = read_image(path)
    vals = np.unique(grid.data)
    if not np.all(np.isin(vals, (0.0, 1.0))):
        raise ValueError(f"{path}: mask payload contains values other than 0 and 1")
    return BinaryMask(grid.data > 0.5)
