"""Dense grid containers, image loading, and shift-subsampling arithmetic.

Conventions used throughout the package:

* Grids are numpy arrays of shape ``(W, H, C)``: axis 0 is the column
  index x, axis 1 the row index y, axis 2 the channel.  Flattened in C
  order this is "x-major, channel innermost", which is also the layout
  of the binary dumps.
* Pixel intensities live in ``[0, 1]`` as 32-bit floats; 8-bit images
  are divided by 255 on load.
* Shifts are integer vectors ``(dx, dy, dc)`` with ``dc == 0``.  A shift
  ``d`` pairs reference position ``x`` with searched position ``x - d``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    FormatError,
    InvalidChannelError,
    InvalidFactorError,
    LayerRangeError,
    ShapeError,
    TruncatedStreamError,
)

# ITU-R BT.601 luma weights; any fixed convex combination would do, this
# one is pinned so outputs are reproducible.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class Grid:
    """A dense (B+1)-dimensional value grid; B = 2 everywhere here.

    ``data`` has shape ``(W, H, C)`` and dtype float32.  Values must be
    finite; activation grids are additionally nonnegative, which is the
    caller's responsibility and asserted by :func:`validate`.
    """

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ShapeError(f"grid must be (W, H, C), got shape {self.data.shape}")
        if self.data.dtype != np.float32:
            object.__setattr__(self, "data", self.data.astype(np.float32))
        self.data.setflags(write=False)

    @property
    def width(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def validate(self, nonnegative: bool = False) -> "Grid":
        if not np.all(np.isfinite(self.data)):
            raise ShapeError("grid contains non-finite values")
        if nonnegative and np.any(self.data < 0):
            raise ShapeError("grid contains negative values")
        return self


@dataclass(frozen=True)
class ShiftSet:
    """Ordered collection of distinct integer displacement vectors.

    Each shift is ``(dx, dy, dc)`` with ``dc == 0``; the channel never
    shifts.
    """

    shifts: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        norm = tuple(tuple(int(c) for c in s) for s in self.shifts)
        if len(set(norm)) != len(norm):
            raise ValueError("shifts must be distinct")
        for s in norm:
            if len(s) != 3:
                raise ValueError(f"shift must have 3 components, got {s}")
            if s[2] != 0:
                raise ValueError(f"channel component of shift must be 0, got {s}")
        object.__setattr__(self, "shifts", norm)

    def __len__(self) -> int:
        return len(self.shifts)

    def __iter__(self):
        return iter(self.shifts)

    def spatial(self) -> list[tuple[int, int]]:
        """The (dx, dy) parts, channel component dropped."""
        return [(s[0], s[1]) for s in self.shifts]

    @classmethod
    def stereo(cls, d_max: int) -> "ShiftSet":
        """Horizontal shifts 0..d_max in increasing order."""
        if d_max < 0:
            raise ValueError("d_max must be >= 0")
        return cls(tuple((d, 0, 0) for d in range(d_max + 1)))


@dataclass(frozen=True)
class SubsampleChain:
    """Per-layer spatial subsampling factors q_1..q_L.

    Convolution layers contribute 1, pooling layers their stride.
    """

    factors: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(int(q) for q in self.factors))
        for q in self.factors:
            if q < 1:
                raise InvalidFactorError(f"subsampling factor must be >= 1, got {q}")

    def __len__(self) -> int:
        return len(self.factors)

    def total(self, upto: int | None = None) -> int:
        """Product of factors q_1..q_upto (all of them by default)."""
        end = len(self.factors) if upto is None else upto
        out = 1
        for q in self.factors[:end]:
            out *= q
        return out


def gamma(shift, q: int):
    """Divide a shift vector by a subsampling factor, flooring toward
    negative infinity element-wise.

    Floor (rather than truncation) keeps composition exact for negative
    shifts; Python's ``//`` already floors.
    """
    if q == 0:
        raise InvalidFactorError("subsampling factor must be nonzero")
    return tuple(int(c) // q for c in shift)


def subsample_shift(chain: SubsampleChain, from_layer: int, to_layer: int, shift):
    """Carry a layer-``from_layer`` shift up to layer ``to_layer`` by
    applying the chain factors q_{from+1}..q_{to} in order."""
    if not (0 <= from_layer <= to_layer <= len(chain)):
        raise LayerRangeError(
            f"layer range {from_layer}..{to_layer} outside 0..{len(chain)}"
        )
    out = tuple(int(c) for c in shift)
    for q in chain.factors[from_layer:to_layer]:
        out = gamma(out, q)
    return out


def to_grayscale(image: Grid) -> Grid:
    """Collapse an RGB grid to one luma channel; single-channel input
    passes through unchanged."""
    if image.channels == 1:
        return image
    if image.channels != 3:
        raise InvalidChannelError(
            f"grayscale conversion needs 1 or 3 channels, got {image.channels}"
        )
    r, g, b = LUMA_WEIGHTS
    luma = r * image.data[:, :, 0] + g * image.data[:, :, 1] + b * image.data[:, :, 2]
    return Grid(luma[:, :, None].astype(np.float32))


def center_crop_multiple(image: Grid, multiple: int) -> Grid:
    """Center-crop both spatial extents down to multiples of ``multiple``
    so that every pooling stage sees whole windows."""
    if multiple <= 0:
        raise InvalidFactorError("crop multiple must be positive")
    w = (image.width // multiple) * multiple
    h = (image.height // multiple) * multiple
    if w == 0 or h == 0:
        raise ShapeError(
            f"image {image.width}x{image.height} smaller than crop multiple {multiple}"
        )
    x0 = (image.width - w) // 2
    y0 = (image.height - h) // 2
    if w == image.width and h == image.height:
        return image
    return Grid(np.ascontiguousarray(image.data[x0 : x0 + w, y0 : y0 + h, :]))


# ----------------------------------------------------------------------
# PGM/PPM input.  Binary 8-bit P5/P6 only; 16-bit P5 is handled by the
# disparity I/O in the stereo module.
# ----------------------------------------------------------------------


def _read_pnm_tokens(buf: bytes, count: int) -> tuple[list[int], int]:
    """Read ``count`` whitespace-separated integers from a PNM header,
    skipping ``#`` comments.  Returns the values and the offset just past
    the single whitespace byte that terminates the last one."""
    tokens: list[int] = []
    i = 0
    while len(tokens) < count:
        if i >= len(buf):
            raise TruncatedStreamError("PNM header ended early")
        c = buf[i : i + 1]
        if c == b"#":
            while i < len(buf) and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
        elif c.isspace():
            i += 1
        elif c.isdigit():
            j = i
            while j < len(buf) and buf[j : j + 1].isdigit():
                j += 1
            tokens.append(int(buf[i:j]))
            i = j
            if len(tokens) == count:
                if i >= len(buf) or not buf[i : i + 1].isspace():
                    raise FormatError("PNM header not terminated by whitespace")
                i += 1
        else:
            raise FormatError(f"unexpected byte {c!r} in PNM header")
    return tokens, i


def parse_pnm_scaled(buf: bytes) -> tuple[np.ndarray, int]:
    """Parse binary PGM (P5) or PPM (P6) bytes into a uint8/uint16 array
    of shape (W, H, C) plus the declared maxval.  16-bit samples are
    big-endian per the format."""
    if buf[:2] == b"P5":
        channels = 1
    elif buf[:2] == b"P6":
        channels = 3
    else:
        raise BadMagicError(f"not a binary PGM/PPM: leading bytes {buf[:2]!r}")
    (width, height, maxval), offset = _read_pnm_tokens(buf[2:], 3)
    offset += 2
    if maxval <= 0 or maxval > 65535:
        raise FormatError(f"unsupported maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    expected = width * height * channels * dtype.itemsize
    raster = buf[offset : offset + expected]
    if len(raster) != expected:
        raise TruncatedStreamError(
            f"PNM raster has {len(raster)} bytes, expected {expected}"
        )
    arr = np.frombuffer(raster, dtype=dtype).reshape(height, width, channels)
    # File order is row-major (y, x, c); internal order is (x, y, c).
    return np.ascontiguousarray(arr.transpose(1, 0, 2)), maxval


def parse_pnm(buf: bytes) -> np.ndarray:
    return parse_pnm_scaled(buf)[0]


def write_pnm(arr: np.ndarray, maxval: int) -> bytes:
    """Serialize a (W, H, C) integer array as binary PGM/PPM bytes."""
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ShapeError(f"PNM needs (W, H, 1|3), got {arr.shape}")
    magic = b"P5" if arr.shape[2] == 1 else b"P6"
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    header = b"%s\n%d %d\n%d\n" % (magic, arr.shape[0], arr.shape[1], maxval)
    return header + np.ascontiguousarray(arr.transpose(1, 0, 2)).astype(dtype).tobytes()


def load_image(path) -> Grid:
    """Load an 8-bit PGM/PPM file into a [0, 1] float grid, scaled by
    the file's declared maxval."""
    with open(path, "rb") as fh:
        arr, maxval = parse_pnm_scaled(fh.read())
    if arr.dtype != np.uint8:
        raise FormatError("image input must be 8-bit; 16-bit PGM is disparity coding")
    return Grid(arr.astype(np.float32) / float(maxval))
