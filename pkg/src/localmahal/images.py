"""Raster-image utilities producing transformation outputs for tangents.

Grayscale images with intensities in [0,1]; every operation clamps its
output back into that range. Interpolating operations use bilinear
resampling with zero fill outside the frame.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import AngleTooLarge, BlankImage, ShiftTooLarge

MAX_ROTATE_DEGREES = 15.0

# Default tangent spec for digit images: four unit shifts.
UNIT_SHIFTS = (("shift", 1, 0), ("shift", -1, 0), ("shift", 0, 1), ("shift", 0, -1))


@dataclass(frozen=True)
class RasterImage:
    """Row-major grayscale image with intensities in [0,1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise ValueError(f"pixels must be a nonempty 2-D array, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("pixel intensities contain NaN or Inf")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("pixel intensities must lie in [0,1]")
        px = px.copy()
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def flatten(self) -> np.ndarray:
        """Row-major feature vector view of the image."""
        return self.pixels.ravel().copy()


def unflatten(values, height: int, width: int) -> RasterImage:
    """Inverse of RasterImage.flatten."""
    v = np.asarray(values, dtype=np.float64)
    if v.size != height * width:
        raise ValueError(f"{v.size} values cannot fill a {height}x{width} image")
    return RasterImage(np.clip(v.reshape(height, width), 0.0, 1.0))


def _clamp(px: np.ndarray) -> np.ndarray:
    return np.clip(px, 0.0, 1.0)


def shift(img: RasterImage, dx: int, dy: int) -> RasterImage:
    """Integer-pixel translate, dx columns right and dy rows down, zero padding."""
    limit = min(img.width, img.height) // 2
    if abs(dx) > limit or abs(dy) > limit:
        raise ShiftTooLarge(f"|dx|,|dy| must be <= {limit}, got ({dx}, {dy})")
    out = np.zeros_like(img.pixels)
    h, w = img.pixels.shape
    src_rows = slice(max(0, -dy), min(h, h - dy))
    src_cols = slice(max(0, -dx), min(w, w - dx))
    dst_rows = slice(max(0, dy), min(h, h + dy))
    dst_cols = slice(max(0, dx), min(w, w + dx))
    out[dst_rows, dst_cols] = img.pixels[src_rows, src_cols]
    return RasterImage(out)


def rotate_small(img: RasterImage, degrees: float) -> RasterImage:
    """Rotate about the image center, bilinear interpolation, zero fill."""
    if abs(degrees) > MAX_ROTATE_DEGREES:
        raise AngleTooLarge(f"|degrees| must be <= {MAX_ROTATE_DEGREES}, got {degrees}")
    if degrees == 0.0:
        return RasterImage(img.pixels)
    theta = np.deg2rad(degrees)
    c, s = np.cos(theta), np.sin(theta)
    # affine_transform maps output coords to input: src = R^-1 (dst - center) + center
    rot = np.array([[c, -s], [s, c]])
    center = (np.array(img.pixels.shape) - 1) / 2.0
    offset = center - rot @ center
    out = ndimage.affine_transform(
        img.pixels, rot, offset=offset, order=1, mode="constant", cval=0.0
    )
    return RasterImage(_clamp(out))


def _moments(px: np.ndarray):
    total = px.sum()
    rows, cols = np.mgrid[: px.shape[0], : px.shape[1]]
    r_bar = (rows * px).sum() / total
    c_bar = (cols * px).sum() / total
    mu_rr = (((rows - r_bar) ** 2) * px).sum() / total
    mu_rc = (((rows - r_bar) * (cols - c_bar)) * px).sum() / total
    return r_bar, c_bar, mu_rr, mu_rc


def deskew(img: RasterImage) -> RasterImage:
    """Moment-based shear correction.

    Shears columns against rows so the row/column covariance vanishes,
    shearing about the intensity centroid, then restores the centroid if
    boundary clipping displaced it.
    """
    px = img.pixels
    if px.sum() <= 0.0:
        raise BlankImage("deskew requires nonzero total intensity")
    r_bar, c_bar, mu_rr, mu_rc = _moments(px)
    if mu_rr <= 0.0:
        return RasterImage(px)
    skew = mu_rc / mu_rr
    if abs(skew) < 1e-12:
        return RasterImage(px)
    # Output-to-input map: src_col = dst_col + skew * (dst_row - r_bar).
    # The forward shear this inverts removes the row/column covariance.
    matrix = np.array([[1.0, 0.0], [skew, 1.0]])
    offset = np.array([0.0, -skew * r_bar])
    out = ndimage.affine_transform(px, matrix, offset=offset, order=1, mode="constant")
    out = _clamp(out)
    if out.sum() > 0.0:
        r2, c2, _, _ = _moments(out)
        disp = (r_bar - r2, c_bar - c2)
        if max(abs(disp[0]), abs(disp[1])) > 1e-9:
            out = _clamp(ndimage.shift(out, disp, order=1, mode="constant"))
    return RasterImage(out)


def apply_transform(img: RasterImage, descriptor) -> RasterImage:
    """Apply one descriptor: ("shift", dx, dy) or ("rotate", degrees)."""
    kind = descriptor[0]
    if kind == "shift":
        return shift(img, int(descriptor[1]), int(descriptor[2]))
    if kind == "rotate":
        return rotate_small(img, float(descriptor[1]))
    raise ValueError(f"unknown transformation descriptor {descriptor!r}")


def make_tangents(img: RasterImage, spec) -> np.ndarray:
    """Flattened T_j(img) for each descriptor, one row per descriptor.

    The caller subtracts the flattened original to obtain tangent vectors
    (build_tangent_set does this).
    """
    rows = [apply_transform(img, desc).flatten() for desc in spec]
    if not rows:
        return np.empty((0, img.height * img.width))
    return np.array(rows)


def parse_transforms(text: str):
    """Parse a descriptor string like "shift:1,0;shift:-1,0;rotate:5".

    The shorthand "unit-shifts" expands to the four unit shifts.
    """
    out = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        if part == "unit-shifts":
            out.extend(UNIT_SHIFTS)
            continue
        kind, _, args = part.partition(":")
        vals = [a.strip() for a in args.split(",") if a.strip()]
        if kind == "shift" and len(vals) == 2:
            out.append(("shift", int(vals[0]), int(vals[1])))
        elif kind == "rotate" and len(vals) == 1:
            out.append(("rotate", float(vals[0])))
        else:
            raise ValueError(f"bad transformation descriptor {part!r}")
    return out
