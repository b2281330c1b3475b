"""Quantile residuals, control-chart masks and the four-rotation anomaly detector."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from rarma2d.estimation import FitOptions, fit_cmle
from rarma2d.model import as_grid, rayleigh_cdf, recurse_latents
from rarma2d.specfun import std_normal_quantile

__all__ = [
    "DEFAULT_PIPELINE",
    "PRESETS",
    "BinaryMask",
    "DetectionReport",
    "FitQuality",
    "MorphOp",
    "ResidualGrid",
    "count_components",
    "detect_anomalies",
    "fit_quality",
    "morphology",
    "parse_pipeline",
    "quantile_residuals",
    "rotate90",
    "run_pipeline",
    "threshold_mask",
]

log = logging.getLogger(__name__)

CDF_CLAMP = 1e-15
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class ResidualGrid:
    """Residuals on the full frame; NaN marks border cells without a prediction."""

    values: np.ndarray
    clamped: int = 0

    @property
    def defined(self):
        return ~np.isnan(self.values)

    def interior(self):
        return self.values[self.defined]


@dataclass(frozen=True)
class BinaryMask:
    bits: np.ndarray
    provenance: str = ""

    @property
    def shape(self):
        return self.bits.shape

    def count(self):
        return int(self.bits.sum())


@dataclass(frozen=True)
class MorphOp:
    kind: str
    size: int

    def __post_init__(self):
        if self.kind not in ("erode", "dilate", "open", "close"):
            raise ValueError(f"unknown morphological operation {self.kind!r}")
        if self.size < 1 or self.size % 2 == 0:
            raise ValueError(f"structuring element must be odd-sized, got {self.size}")

    def __str__(self):
        return f"{self.kind}:{self.size}"


DEFAULT_PIPELINE = (MorphOp("open", 3), MorphOp("dilate", 7))
PRESETS = {
    "default": DEFAULT_PIPELINE,
    "carabas": DEFAULT_PIPELINE,
    "sanfrancisco": (MorphOp("close", 11), MorphOp("open", 11)),
    "none": (),
}


def parse_pipeline(text):
    """``"open:3,dilate:7"`` or a preset name -> tuple of :class:`MorphOp`."""
    text = text.strip()
    if text in PRESETS:
        return PRESETS[text]
    ops = []
    for item in text.split(","):
        kind, _, size = item.strip().partition(":")
        if not size:
            raise ValueError(f"morphology step {item!r} must look like kind:size")
        ops.append(MorphOp(kind.strip(), int(size)))
    return tuple(ops)


def quantile_residuals(y, latents, spec=None):
    """``Phi^{-1}(F(y | mu))`` on interior cells.

    CDF values are clamped to ``[1e-15, 1 - 1e-15]``; the clamp count is kept.
    """
    y = np.asarray(y, dtype=float)
    w = latents.w
    mu = latents.mu[w:, w:]
    u = rayleigh_cdf(y[w:, w:], mu)
    clamp = (u < CDF_CLAMP) | (u > 1 - CDF_CLAMP)
    u = np.clip(u, CDF_CLAMP, 1 - CDF_CLAMP)
    values = np.full(y.shape, np.nan)
    values[w:, w:] = std_normal_quantile(u)
    return ResidualGrid(values, int(clamp.sum()))


def threshold_mask(residuals, limit=3.0, provenance="threshold"):
    """Bits set where ``|r| >= limit``; undefined cells stay clear."""
    if limit <= 0:
        raise ValueError("control limit must be positive")
    r = residuals.values if isinstance(residuals, ResidualGrid) else np.asarray(residuals, float)
    with np.errstate(invalid="ignore"):
        bits = np.abs(r) >= limit
    return BinaryMask(np.where(np.isnan(r), False, bits), provenance)


def rotate90(grid, k=1):
    """Counterclockwise rotation by ``90 * k`` degrees (``k`` may be negative)."""
    if isinstance(grid, BinaryMask):
        return BinaryMask(np.rot90(grid.bits, k), grid.provenance)
    return np.rot90(np.asarray(grid), k)


def morphology(mask, op, border_value=0):
    """Binary erosion/dilation/opening/closing with an all-ones square element.

    Pixels outside the frame count as ``border_value`` (background by default).
    """
    bits = mask.bits if isinstance(mask, BinaryMask) else np.asarray(mask, dtype=bool)
    element = np.ones((op.size, op.size), dtype=bool)

    def erode(a):
        return ndimage.binary_erosion(a, element, border_value=border_value)

    def dilate(a):
        # scipy's dilation has no padding value; emulate foreground padding by hand
        if border_value:
            h = op.size // 2
            padded = np.pad(a, h, constant_values=True)
            return ndimage.binary_dilation(padded, element)[h:-h or None, h:-h or None]
        return ndimage.binary_dilation(a, element)

    if op.kind == "erode":
        out = erode(bits)
    elif op.kind == "dilate":
        out = dilate(bits)
    elif op.kind == "open":
        out = dilate(erode(bits))
    else:
        out = erode(dilate(bits))
    return BinaryMask(out, str(op))


def run_pipeline(mask, pipeline):
    bits = mask.bits if isinstance(mask, BinaryMask) else np.asarray(mask, dtype=bool)
    for op in pipeline:
        bits = morphology(bits, op).bits
    return BinaryMask(bits, "post-morphology")


def count_components(mask):
    bits = mask.bits if isinstance(mask, BinaryMask) else np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(bits, structure=EIGHT_CONNECTED)
    return labels, n


@dataclass(frozen=True)
class FitQuality:
    mse: float
    mape: float


def fit_quality(y, mu_hat):
    """MSE and MAPE between aligned interior observations and fitted means."""
    y = np.asarray(y, dtype=float)
    mu_hat = np.asarray(mu_hat, dtype=float)
    if y.shape != mu_hat.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {mu_hat.shape}")
    diff = y - mu_hat
    return FitQuality(float(np.mean(diff**2)), float(np.mean(np.abs(diff) / y)))


@dataclass
class RotationResult:
    k: int
    fit: object
    residuals: ResidualGrid
    mask: BinaryMask  # in the original frame


@dataclass
class DetectionReport:
    mask: BinaryMask
    union: BinaryMask
    rotations: list
    quality: FitQuality
    degraded: bool = False
    notes: list = field(default_factory=list)

    @property
    def components(self):
        return count_components(self.mask)[1]


def _roi_slice(roi, shape):
    row, col, height, width = (int(v) for v in roi)
    if row < 0 or col < 0 or height < 1 or width < 1 or row + height > shape[0] or col + width > shape[1]:
        raise ValueError(f"ROI {tuple(roi)} outside the {shape[0]}x{shape[1]} input")
    return np.s_[row : row + height, col : col + width]


def _rotation(k, image, roi_img, spec, limit, options):
    fit = fit_cmle(rotate90(roi_img, k), spec, options)
    full = np.ascontiguousarray(rotate90(image, k))
    lat = recurse_latents(full, spec, fit.gamma)
    res = quantile_residuals(full, lat, spec)
    mask = threshold_mask(res, limit, provenance=f"rotation {k}")
    aligned = BinaryMask(np.ascontiguousarray(rotate90(mask.bits, -k)), f"rotation {k}")
    return RotationResult(k, fit, res, aligned)


def detect_anomalies(image, roi, spec, limit=3.0, pipeline=DEFAULT_PIPELINE, options=None,
                     workers=1):
    """Four-rotation control-chart detector.

    The model is fitted on the ROI and its three counterclockwise rotations.
    Each fitted model then predicts one step ahead over the whole (rotated)
    input, with MA errors rebuilt along the sweep. Chart exceedances of every
    rotation are mapped back to the input frame, united, and post-processed.

    ``roi`` is ``(row, col, height, width)``, 0-based.
    """
    image = as_grid(image)
    roi_img = image[_roi_slice(roi, image.shape)]
    options = options or FitOptions()
    if workers > 1:
        with ThreadPoolExecutor(min(workers, 4)) as pool:
            rotations = list(pool.map(
                lambda k: _rotation(k, image, roi_img, spec, limit, options), range(4)))
    else:
        rotations = [_rotation(k, image, roi_img, spec, limit, options) for k in range(4)]

    notes = []
    used = [r for r in rotations if r.fit.converged]
    for r in rotations:
        if not r.fit.converged:
            notes.append(f"rotation {r.k} fit did not converge ({r.fit.message}); excluded")
    if not used:
        notes.append("no rotation converged; using all rotations")
        used = rotations
    union = np.zeros(image.shape, dtype=bool)
    for r in used:
        union |= r.mask.bits
    union = BinaryMask(union, "union")
    detected = run_pipeline(union, pipeline)

    base = rotations[0].fit
    w = spec.w
    quality = fit_quality(roi_img[w:, w:], base.mu_hat)
    return DetectionReport(detected, union, rotations, quality, degraded=bool(notes), notes=notes)
