"""Detection chain: object absorption, arm losses, background and pixel binning."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .frames import FramePair, FrameStack, derive_seed, map_frames, substream
from .pgm import read_pgm
from .statgen import thin_counts
from .validation import (
    DataError,
    check_nonnegative,
    check_probability,
    check_seed,
    check_same_frame_shape,
)


class UnbalancedLossWarning(UserWarning):
    """Signal and idler efficiencies differ; closed-form ratios assume they are equal."""


@dataclass(frozen=True)
class DetectorModel:
    eta_signal: float = 1.0
    eta_idler: float = 1.0
    dark_mean: float = 0.0
    read_noise_rms: float = 0.0
    bin_factor: int = 1

    def __post_init__(self):
        check_probability(self.eta_signal, "eta_signal")
        check_probability(self.eta_idler, "eta_idler")
        check_nonnegative(self.dark_mean, "dark_mean")
        check_nonnegative(self.read_noise_rms, "read_noise_rms")
        if not isinstance(self.bin_factor, (int, np.integer)) or self.bin_factor < 1:
            raise ValueError(f"bin_factor must be an integer >= 1, got {self.bin_factor!r}")

    @classmethod
    def balanced(cls, eta: float, **kw) -> "DetectorModel":
        return cls(eta_signal=eta, eta_idler=eta, **kw)

    @property
    def is_balanced(self) -> bool:
        return self.eta_signal == self.eta_idler


@dataclass(frozen=True)
class ObjectMask:
    """Per-pixel absorption probability on the signal grid."""

    alpha: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError("alpha must be a 2-D map")
        if not np.all(np.isfinite(a)) or a.min() < 0 or a.max() > 1:
            raise ValueError("alpha must lie in [0, 1] everywhere")
        object.__setattr__(self, "alpha", a)

    @classmethod
    def uniform(cls, height: int, width: int, alpha: float) -> "ObjectMask":
        return cls(np.full((height, width), check_probability(alpha, "alpha")))

    @classmethod
    def from_pgm(cls, path) -> "ObjectMask":
        img, maxval = read_pgm(path)
        return cls(img / maxval)

    @property
    def shape(self):
        return self.alpha.shape


def pi_glyph(height: int, width: int, alpha: float) -> ObjectMask:
    """A procedural capital-pi shaped absorber of uniform ``alpha`` on a clear background."""
    check_probability(alpha, "alpha")
    rows = np.arange(height)[:, None] / height
    cols = np.arange(width)[None, :] / width
    bar = (rows >= 0.2) & (rows < 0.32) & (cols >= 0.18) & (cols < 0.82)
    left = (rows >= 0.2) & (rows < 0.82) & (cols >= 0.3) & (cols < 0.42)
    right = (rows >= 0.2) & (rows < 0.82) & (cols >= 0.58) & (cols < 0.7)
    return ObjectMask(np.where(bar | left | right, alpha, 0.0))


def apply_object(signal: FrameStack, mask: ObjectMask, seed: int, n_jobs: int | None = 1) -> FrameStack:
    """Each photon survives the object independently with probability 1 - alpha(x)."""
    seed = check_seed(seed)
    check_same_frame_shape(signal.counts, mask.alpha, "apply_object")
    return signal.with_counts(thin_counts(signal.counts, 1.0 - mask.alpha, seed, "object", n_jobs))


def apply_loss(stack: FrameStack, eta: float, seed: int, n_jobs: int | None = 1) -> FrameStack:
    eta = check_probability(eta, "eta")
    seed = check_seed(seed)
    return stack.with_counts(thin_counts(stack.counts, eta, seed, "loss", n_jobs))


def add_background(stack: FrameStack, det: DetectorModel, seed: int, n_jobs: int | None = 1) -> FrameStack:
    """Add Poisson dark counts and rounded Gaussian read noise; the result is clamped at zero."""
    seed = check_seed(seed)
    if det.dark_mean == 0 and det.read_noise_rms == 0:
        return stack.with_counts(stack.counts.copy())
    counts = stack.counts
    shape = counts.shape[1:]

    def frame(f):
        rng = substream(seed, f, "background")
        out = counts[f].astype(np.int64)
        if det.dark_mean > 0:
            out = out + rng.poisson(det.dark_mean, size=shape)
        if det.read_noise_rms > 0:
            out = out + np.rint(rng.normal(0.0, det.read_noise_rms, size=shape)).astype(np.int64)
        return np.maximum(out, 0)

    return stack.with_counts(np.stack(map_frames(frame, counts.shape[0], n_jobs)))


def bin_pixels(stack: FrameStack, factor: int) -> FrameStack:
    """Sum non-overlapping factor x factor blocks."""
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ValueError(f"bin factor must be an integer >= 1, got {factor!r}")
    n, h, w = stack.counts.shape
    if h % factor or w % factor:
        raise DataError(f"bin factor {factor} does not divide frame size {w}x{h}")
    if factor == 1:
        return stack.with_counts(stack.counts.copy())
    binned = stack.counts.reshape(n, h // factor, factor, w // factor, factor).sum(axis=(2, 4))
    return stack.with_counts(binned)


def run_chain(signal_pre: FrameStack, idler_pre: FrameStack, mask: ObjectMask | None,
              det: DetectorModel, seed: int, n_jobs: int | None = 1) -> FramePair:
    """Object (signal only), per-arm loss, background, then binning on both arms."""
    seed = check_seed(seed)
    if not det.is_balanced:
        warnings.warn(
            f"unbalanced efficiencies eta_s={det.eta_signal}, eta_i={det.eta_idler}",
            UnbalancedLossWarning,
            stacklevel=2,
        )
    signal = signal_pre
    if mask is not None:
        signal = apply_object(signal, mask, derive_seed(seed, "object"), n_jobs)
    signal = apply_loss(signal, det.eta_signal, derive_seed(seed, "loss/signal"), n_jobs)
    idler = apply_loss(idler_pre, det.eta_idler, derive_seed(seed, "loss/idler"), n_jobs)
    signal = add_background(signal, det, derive_seed(seed, "background/signal"), n_jobs)
    idler = add_background(idler, det, derive_seed(seed, "background/idler"), n_jobs)
    signal = bin_pixels(signal, det.bin_factor)
    idler = bin_pixels(idler, det.bin_factor)
    return FramePair(FrameStack(signal.counts, "signal"), FrameStack(idler.counts, "idler"))


class DetectionChain(TransformerMixin, BaseEstimator):
    """Transformer wrapper around :func:`run_chain`.

    ``transform`` takes a :class:`FramePair` of pre-detection stacks and
    returns the detected pair.  ``alpha`` may be a 2-D map or None.
    """

    def __init__(self, eta_signal=1.0, eta_idler=1.0, dark_mean=0.0, read_noise_rms=0.0,
                 bin_factor=1, alpha=None, random_state=0, n_jobs=1):
        self.eta_signal = eta_signal
        self.eta_idler = eta_idler
        self.dark_mean = dark_mean
        self.read_noise_rms = read_noise_rms
        self.bin_factor = bin_factor
        self.alpha = alpha
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X=None, y=None):
        self.detector_ = DetectorModel(self.eta_signal, self.eta_idler, self.dark_mean,
                                       self.read_noise_rms, self.bin_factor)
        self.mask_ = None if self.alpha is None else ObjectMask(self.alpha)
        return self

    def transform(self, X: FramePair) -> FramePair:
        check_is_fitted(self, "detector_")
        return run_chain(X.signal, X.idler, self.mask_, self.detector_, self.random_state, self.n_jobs)
