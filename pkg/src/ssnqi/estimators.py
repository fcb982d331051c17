"""Measurement pipeline: correlation degree, excess noise, absorption maps and SNR ratios.

Conventions
-----------
Signal and idler stacks share the shape (n_frames, H, W).  The idler is
stored on its own grid, so the pixel correlated with signal pixel (r, c) is
idler pixel (H-1-r, W-1-c).  A :class:`ShiftVector` ``(dx, dy)`` moves the
idler sampling point to (H-1-r+dy, W-1-c+dx).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .frames import FramePair, FrameStack, mirror_frames
from .validation import DataError, check_same_frame_shape

SCHEMES = ("q", "dcl", "cl")


class ShiftTooSmallWarning(UserWarning):
    """Decorrelation shift does not exceed the pair-spread radius."""


# --------------------------------------------------------------------------- regions


@dataclass(frozen=True)
class Region:
    """Set of signal-grid pixels; its idler counterpart is the mirrored set."""

    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 2:
            raise ValueError("region mask must be 2-D")
        if not m.any():
            raise DataError("region is empty")
        object.__setattr__(self, "mask", m)

    @classmethod
    def full(cls, height: int, width: int) -> "Region":
        return cls(np.ones((height, width), dtype=bool))

    @classmethod
    def interior(cls, height: int, width: int, margin: int = 0) -> "Region":
        """All pixels at least ``margin`` pixels away from every edge."""
        m = np.zeros((height, width), dtype=bool)
        if 2 * margin >= min(height, width):
            raise DataError(f"margin {margin} leaves no pixels in a {width}x{height} frame")
        m[margin:height - margin, margin:width - margin] = True
        return cls(m)

    @property
    def shape(self):
        return self.mask.shape

    @property
    def n_pixels(self) -> int:
        return int(self.mask.sum())

    def mirrored(self) -> "Region":
        return Region(self.mask[::-1, ::-1])

    def intersect(self, other) -> "Region":
        other = other.mask if isinstance(other, Region) else np.asarray(other, dtype=bool)
        return Region(self.mask & other)

    def shift_valid(self, shift: "ShiftVector") -> "Region":
        """Restrict to pixels whose shifted idler partner lies inside the frame."""
        return self.intersect(shift_valid_mask(self.shape, shift))


@dataclass(frozen=True)
class ShiftVector:
    dx: int = 0
    dy: int = 0
    low_confidence: bool = field(default=False, compare=False)

    @property
    def magnitude(self) -> int:
        return max(abs(self.dx), abs(self.dy))

    def as_tuple(self) -> tuple[int, int]:
        return (self.dx, self.dy)


ZERO_SHIFT = ShiftVector(0, 0)


def default_shift(kernel_radius: int) -> ShiftVector:
    """Decorrelation shift along x: four kernel radii, never less than four pixels."""
    return ShiftVector(max(4 * int(kernel_radius), 4), 0)


def shift_valid_mask(shape, shift: ShiftVector) -> np.ndarray:
    h, w = shape
    m = np.zeros((h, w), dtype=bool)
    dy, dx = shift.dy, shift.dx
    m[max(dy, 0):h + min(dy, 0), max(dx, 0):w + min(dx, 0)] = True
    return m


def aligned_idler(idler: np.ndarray, shift: ShiftVector = ZERO_SHIFT) -> np.ndarray:
    """Idler counts resampled onto the signal grid: out[..., r, c] = idler[..., H-1-r+dy, W-1-c+dx].

    Pixels whose partner falls outside the frame are NaN.
    """
    mir = mirror_frames(np.asarray(idler, dtype=np.float64))
    dy, dx = shift.dy, shift.dx
    h, w = mir.shape[-2:]
    out = np.full(mir.shape, np.nan)
    if abs(dy) >= h or abs(dx) >= w:
        return out
    out[..., max(dy, 0):h + min(dy, 0), max(dx, 0):w + min(dx, 0)] = \
        mir[..., max(-dy, 0):h + min(-dy, 0), max(-dx, 0):w + min(-dx, 0)]
    return out


def _region_for(region: Region | None, shape) -> Region:
    if region is None:
        return Region.full(*shape)
    if region.shape != tuple(shape):
        raise DataError(f"region shape {region.shape} does not match frames {tuple(shape)}")
    return region


# --------------------------------------------------------------------------- sigma, E


@dataclass(frozen=True)
class SigmaEstimate:
    frame_id: int
    sigma: float
    n_pixels: int
    mean_signal: float
    mean_idler: float


def sigma_per_frame(signal: np.ndarray, idler: np.ndarray, region: Region | None = None,
                    shift: ShiftVector = ZERO_SHIFT) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Vectorised core of :func:`estimate_sigma`: (sigma, mean_signal, mean_idler, n_pixels)."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim == 2:
        signal = signal[None]
    check_same_frame_shape(signal, np.asarray(idler), "sigma")
    region = _region_for(region, signal.shape[-2:]).shift_valid(shift)
    ns = signal[:, region.mask]
    ni = aligned_idler(idler, shift)
    if ni.ndim == 2:
        ni = ni[None]
    ni = ni[:, region.mask]
    diff = ni - ns
    mean_s = ns.mean(axis=1)
    mean_i = ni.mean(axis=1)
    total = mean_s + mean_i
    if np.any(total <= 0):
        bad = int(np.flatnonzero(total <= 0)[0])
        raise DataError(f"frame {bad}: zero mean photon number in the region")
    var = ((diff - diff.mean(axis=1, keepdims=True)) ** 2).mean(axis=1)
    return var / total, mean_s, mean_i, region.n_pixels


def estimate_sigma(pair: FramePair, region: Region | None = None,
                   shift: ShiftVector = ZERO_SHIFT) -> list[SigmaEstimate]:
    """Per-frame degree of correlation over a region of mirrored pixel pairs.

    The spatial variance uses the population (n) denominator.
    """
    sig, ms, mi, n = sigma_per_frame(pair.signal.counts, pair.idler.counts, region, shift)
    return [SigmaEstimate(f, float(sig[f]), n, float(ms[f]), float(mi[f])) for f in range(len(sig))]


def excess_noise_per_frame(stack: FrameStack, region: Region | None = None) -> np.ndarray:
    counts = np.asarray(stack.counts, dtype=np.float64)
    region = _region_for(region, counts.shape[-2:])
    if stack.arm == "idler":
        region = region.mirrored()
    x = counts[:, region.mask]
    mean = x.mean(axis=1)
    if np.any(mean <= 0):
        raise DataError("zero mean photon number in the region")
    var = ((x - mean[:, None]) ** 2).mean(axis=1)
    return (var - mean) / mean


def estimate_excess_noise(stack: FrameStack, region: Region | None = None) -> float:
    """Spatial excess noise (var - mean)/mean, averaged over frames.

    For an idler stack the region is taken as the mirror of the given signal-grid region.
    """
    return math.fsum(excess_noise_per_frame(stack, region)) / stack.n_frames


# --------------------------------------------------------------------------- flat field


class FlatField(TransformerMixin, BaseEstimator):
    """Per-pixel gain correction that equalises the temporal mean image.

    ``fit`` learns gain(x) = level / temporal mean at x, where the level is
    the global mean, or the mean over ``region`` when one is given (so an
    absorber elsewhere in the frame does not rescale the analysed pixels).
    ``transform`` multiplies every frame by the gain.
    """

    def fit(self, X: FrameStack, y=None, region: Region | None = None):
        counts = np.asarray(X.counts, dtype=np.float64)
        if counts.shape[0] < 2:
            raise DataError("flat-field needs at least 2 frames")
        temporal = counts.mean(axis=0)
        if np.any(temporal <= 0):
            n_bad = int((temporal <= 0).sum())
            raise DataError(f"{n_bad} pixel(s) with zero temporal mean")
        if region is None:
            level = temporal.mean()
        else:
            region = _region_for(region, temporal.shape)
            if X.arm == "idler":
                region = region.mirrored()
            level = temporal[region.mask].mean()
        self.gain_ = level / temporal
        return self

    def transform(self, X: FrameStack) -> FrameStack:
        check_is_fitted(self, "gain_")
        check_same_frame_shape(X.counts, self.gain_, "flat-field")
        return FrameStack(X.counts * self.gain_, X.arm)


def flat_field(stack: FrameStack) -> FrameStack:
    return FlatField().fit_transform(stack)


# --------------------------------------------------------------------------- registration


def _mean_sigma_grid(signal, idler, region, radius):
    shifts = [ShiftVector(dx, dy) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)]
    common = region.mask.copy()
    for s in shifts:
        common &= shift_valid_mask(region.shape, s)
    common = Region(common)
    means = {}
    for s in shifts:
        sig, *_ = sigma_per_frame(signal, idler, common, s)
        means[s.as_tuple()] = math.fsum(sig) / len(sig)
    return means


def _best_shift(means: dict) -> tuple[int, int]:
    return min(means, key=lambda k: (means[k], k[0] ** 2 + k[1] ** 2, k[0], k[1]))


def _contrast(means: dict) -> float:
    values = np.array(list(means.values()))
    return float(np.median(values) - values.min())


def calibrate_center(pairs: FramePair, search_radius: int = 4, region: Region | None = None,
                     seed: int = 0, confidence_factor: float = 3.0) -> ShiftVector:
    """Integer idler shift that minimises the frame-averaged correlation degree.

    Confidence is judged against a null obtained by pairing each signal frame
    with a different (shuffled) idler frame; the result is flagged
    ``low_confidence`` when the sigma dip is under ``confidence_factor`` times
    the null dip.
    """
    signal = np.asarray(pairs.signal.counts, dtype=np.float64)
    idler = np.asarray(pairs.idler.counts, dtype=np.float64)
    if signal.shape[0] < 10:
        raise DataError("registration needs at least 10 frames")
    region = _region_for(region, signal.shape[-2:])
    try:
        means = _mean_sigma_grid(signal, idler, region, search_radius)
    except DataError as exc:
        raise DataError(f"sigma not computable during registration: {exc}") from exc
    dx, dy = _best_shift(means)

    n = signal.shape[0]
    perm = np.random.default_rng(seed).permutation(n)
    perm = np.where(perm == np.arange(n), np.roll(perm, 1), perm)
    null = _mean_sigma_grid(signal, idler[perm], region, search_radius)
    low = _contrast(means) < confidence_factor * _contrast(null)
    return ShiftVector(dx, dy, low_confidence=bool(low))


class CenterCalibrator(BaseEstimator):
    def __init__(self, search_radius=4, confidence_factor=3.0, random_state=0):
        self.search_radius = search_radius
        self.confidence_factor = confidence_factor
        self.random_state = random_state

    def fit(self, X: FramePair, y=None, region: Region | None = None):
        self.shift_ = calibrate_center(X, self.search_radius, region, self.random_state,
                                       self.confidence_factor)
        return self


# --------------------------------------------------------------------------- absorption


@dataclass
class AlphaMap:
    """Per-frame absorption estimates, shape (n_frames, H, W); NaN where undefined."""

    values: np.ndarray
    scheme: str

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        v = np.asarray(self.values, dtype=np.float64)
        self.values = v[None] if v.ndim == 2 else v

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    def mean_map(self) -> np.ndarray:
        return self.values.mean(axis=0)

    def select(self, frames) -> "AlphaMap":
        return AlphaMap(self.values[np.asarray(frames)], self.scheme)


def _check_ref(n_i_ref: float) -> float:
    if not n_i_ref > 0:
        raise ValueError(f"reference photon number must be > 0, got {n_i_ref}")
    return float(n_i_ref)


def alpha_q(pair: FramePair, n_i_ref: float) -> AlphaMap:
    """Quantum scheme: subtract the correlated idler pattern."""
    ref = _check_ref(n_i_ref)
    ni = aligned_idler(pair.idler.counts)
    return AlphaMap((ni - pair.signal.counts) / ref, "q")


def alpha_dcl(pair: FramePair, shift: ShiftVector, n_i_ref: float, kernel_radius: int = 0) -> AlphaMap:
    """Differential classical scheme: subtract an idler region displaced by ``shift``."""
    ref = _check_ref(n_i_ref)
    if shift.magnitude != 0 and shift.magnitude <= kernel_radius:
        warnings.warn(
            f"shift {shift.as_tuple()} does not exceed the pair-spread radius {kernel_radius}; "
            "residual correlations will bias the differential estimate",
            ShiftTooSmallWarning,
            stacklevel=2,
        )
    ni = aligned_idler(pair.idler.counts, shift)
    return AlphaMap((ni - pair.signal.counts) / ref, "dcl")


def alpha_cl(signal: FrameStack, n_i_ref: float) -> AlphaMap:
    """Direct classical scheme against a noiseless reference level."""
    ref = _check_ref(n_i_ref)
    return AlphaMap((ref - np.asarray(signal.counts, dtype=np.float64)) / ref, "cl")


def reference_level(stack: FrameStack, region: Region | None = None) -> float:
    """Temporal-spatial mean of an object-free stack over a (signal-grid) region."""
    counts = np.asarray(stack.counts, dtype=np.float64)
    region = _region_for(region, counts.shape[-2:])
    if stack.arm == "idler":
        region = region.mirrored()
    per_frame = counts[:, region.mask].mean(axis=1)
    return math.fsum(per_frame) / len(per_frame)


class AbsorptionImager(TransformerMixin, BaseEstimator):
    """Quantum, differential-classical and direct-classical absorption maps.

    ``fit`` takes an object-free calibration stack and stores the reference
    photon number; ``transform`` maps a detected :class:`FramePair` to a dict
    of :class:`AlphaMap` keyed by scheme.
    """

    def __init__(self, shift=None, kernel_radius=0):
        self.shift = shift
        self.kernel_radius = kernel_radius

    def fit(self, X: FrameStack, y=None, region: Region | None = None):
        self.n_i_ref_ = reference_level(X, region)
        if not self.n_i_ref_ > 0:
            raise DataError("calibration stack has zero mean")
        s = self.shift
        if s is None:
            s = default_shift(self.kernel_radius)
        elif not isinstance(s, ShiftVector):
            s = ShiftVector(*s)
        self.shift_ = s
        return self

    def transform(self, X: FramePair) -> dict[str, AlphaMap]:
        check_is_fitted(self, "n_i_ref_")
        return {
            "q": alpha_q(X, self.n_i_ref_),
            "dcl": alpha_dcl(X, self.shift_, self.n_i_ref_, self.kernel_radius),
            "cl": alpha_cl(X.signal, self.n_i_ref_),
        }


# --------------------------------------------------------------------------- SNR and R


@dataclass
class SnrReport:
    scheme: str
    snr: np.ndarray
    mean_snr: float
    n_frames: int

    @property
    def defined(self) -> np.ndarray:
        return np.isfinite(self.snr)


def snr_map(alphas, region: Region | None = None) -> SnrReport:
    """Per-pixel |temporal mean| / temporal standard deviation (n-1 denominator).

    Pixels with zero variance (or no data) are NaN.  ``alphas`` is an
    :class:`AlphaMap` or a sequence of single-scheme maps to be concatenated
    along the frame axis.
    """
    if isinstance(alphas, AlphaMap):
        values, scheme = alphas.values, alphas.scheme
    else:
        alphas = list(alphas)
        if not alphas:
            raise DataError("no alpha maps given")
        schemes = {a.scheme for a in alphas}
        if len(schemes) != 1:
            raise ValueError(f"mixed schemes {sorted(schemes)}")
        scheme = schemes.pop()
        values = np.concatenate([a.values for a in alphas])
    n = values.shape[0]
    if n < 2:
        raise DataError("SNR needs at least 2 frames")
    mean = values.mean(axis=0)
    std = values.std(axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        snr = np.where(std > 0, np.abs(mean) / std, np.nan)
    region = _region_for(region, snr.shape)
    inside = snr[region.mask]
    inside = inside[np.isfinite(inside)]
    mean_snr = float(inside.mean()) if inside.size else float("nan")
    return SnrReport(scheme, snr, mean_snr, n)


def r_ratio(snr_q: SnrReport, snr_classical: SnrReport, region: Region | None = None,
            max_excluded: float = 0.5) -> tuple[float, float]:
    """Spatial mean of the per-pixel SNR ratio and its standard error."""
    if snr_q.snr.shape != snr_classical.snr.shape:
        raise DataError("SNR maps have different shapes")
    region = _region_for(region, snr_q.snr.shape)
    a = snr_q.snr[region.mask]
    b = snr_classical.snr[region.mask]
    ok = np.isfinite(a) & np.isfinite(b) & (b > 0)
    excluded = 1.0 - ok.mean()
    if excluded > max_excluded:
        raise DataError(f"{excluded:.0%} of region pixels have undefined SNR")
    ratio = a[ok] / b[ok]
    r = math.fsum(ratio) / ratio.size
    err = float(ratio.std(ddof=1) / np.sqrt(ratio.size)) if ratio.size > 1 else 0.0
    return r, err


# --------------------------------------------------------------------------- frame classes


@dataclass
class FrameClass:
    j: int
    sigma_j: float
    members: tuple
    lower: float
    upper: float
    r_cl: float = float("nan")
    r_cl_err: float = float("nan")
    r_dcl: float = float("nan")
    r_dcl_err: float = float("nan")

    @property
    def n_frames(self) -> int:
        return len(self.members)


def _sigma_values(sigmas):
    ids, vals = [], []
    for k, s in enumerate(sigmas):
        if isinstance(s, SigmaEstimate):
            ids.append(s.frame_id)
            vals.append(s.sigma)
        else:
            ids.append(k)
            vals.append(float(s))
    return np.array(ids), np.array(vals, dtype=np.float64)


def _bin_edges(values: np.ndarray, n_bins: int) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.array([lo, hi])
    return np.linspace(lo, hi, n_bins + 1)


def _assign(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    if len(edges) == 2 and edges[0] == edges[1]:
        return np.where(values == edges[0], 0, -1)
    idx = np.searchsorted(edges, values, side="right") - 1
    idx[values == edges[-1]] = len(edges) - 2
    idx[(values < edges[0]) | (values > edges[-1])] = -1
    return idx


def classify_frames(sigmas, n_bins: int = 5, min_members: int = 20) -> list[FrameClass]:
    """Group frames into equal-width sigma bins; underpopulated bins are dropped."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    ids, vals = _sigma_values(sigmas)
    if vals.size == 0:
        raise DataError("no frames to classify")
    edges = _bin_edges(vals, n_bins)
    labels = _assign(vals, edges)
    classes = []
    for j in range(len(edges) - 1):
        sel = labels == j
        if sel.sum() < max(min_members, 2):
            continue
        classes.append(FrameClass(j, math.fsum(vals[sel]) / sel.sum(), tuple(int(i) for i in ids[sel]),
                                  float(edges[j]), float(edges[j + 1])))
    if not classes:
        raise DataError(f"every sigma class has fewer than {max(min_members, 2)} frames")
    return classes


class FrameClassifier(BaseEstimator):
    """Equal-width sigma binning; ``predict`` returns the class id or -1 for dropped bins."""

    def __init__(self, n_bins=5, min_members=20):
        self.n_bins = n_bins
        self.min_members = min_members

    def fit(self, X, y=None):
        _, vals = _sigma_values(X)
        self.classes_ = classify_frames(X, self.n_bins, self.min_members)
        self.bin_edges_ = _bin_edges(vals, self.n_bins)
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "classes_")
        _, vals = _sigma_values(X)
        labels = _assign(vals, self.bin_edges_)
        kept = {c.j for c in self.classes_}
        return np.array([lab if lab in kept else -1 for lab in labels])


# --------------------------------------------------------------------------- correlation


class CorrelationAnalyzer(BaseEstimator):
    """Per-frame sigma and excess noise of a detected pair.

    With ``flat_field=True`` each arm is gain-corrected (fitted on itself)
    before the correlation degree is computed.
    """

    def __init__(self, flat_field=True, shift=None):
        self.flat_field = flat_field
        self.shift = shift

    def fit(self, X: FramePair, y=None, region: Region | None = None):
        signal, idler = X.signal, X.idler
        if self.flat_field:
            signal = FlatField().fit(signal, region=region).transform(signal)
            idler = FlatField().fit(idler, region=region).transform(idler)
        shift = ZERO_SHIFT if self.shift is None else self.shift
        if not isinstance(shift, ShiftVector):
            shift = ShiftVector(*shift)
        self.sigmas_ = estimate_sigma(FramePair(signal, idler), region, shift)
        values = np.array([s.sigma for s in self.sigmas_])
        self.sigma_mean_ = math.fsum(values) / values.size
        self.sigma_sem_ = float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else float("nan")
        self.excess_idler_ = excess_noise_per_frame(X.idler, region)
        self.excess_mean_ = math.fsum(self.excess_idler_) / self.excess_idler_.size
        return self

    @property
    def sigma_values_(self) -> np.ndarray:
        return np.array([s.sigma for s in self.sigmas_])
