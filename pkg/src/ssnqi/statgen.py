"""Pre-detection photon-count generators for twin, coherent and multithermal light.

Every generator is a pure function of its parameters and a master seed.  Each
frame draws from its own substream, so frames can be produced in any order
(or concurrently) with identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .frames import FrameStack, Geometry, map_frames, mirror_frames, substream
from .validation import check_nonnegative, check_positive, check_probability, check_seed

SOURCE_KINDS = ("twin", "coherent", "thermal", "coherent_split")


@dataclass(frozen=True)
class PairKernel:
    """Distribution of an idler photon's landing offset around the mirrored pixel.

    ``weights`` is a (2r+1, 2r+1) array indexed [dy + r, dx + r].
    """

    radius: int = 0
    weights: np.ndarray = field(default_factory=lambda: np.ones((1, 1)))

    def __post_init__(self):
        if not isinstance(self.radius, (int, np.integer)) or self.radius < 0:
            raise ValueError(f"radius must be an integer >= 0, got {self.radius!r}")
        w = np.asarray(self.weights, dtype=np.float64)
        size = 2 * self.radius + 1
        if w.shape != (size, size):
            raise ValueError(f"weights must have shape {(size, size)}, got {w.shape}")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("kernel weights must be finite and nonnegative")
        if abs(math.fsum(w.ravel()) - 1.0) > 1e-12:
            raise ValueError(f"kernel weights must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "weights", w)

    @classmethod
    def delta(cls) -> "PairKernel":
        return cls(0, np.ones((1, 1)))

    @classmethod
    def uniform(cls, radius: int) -> "PairKernel":
        size = 2 * radius + 1
        return cls(radius, _normalize(np.ones((size, size))))

    @classmethod
    def gaussian(cls, radius: int, width: float) -> "PairKernel":
        """Isotropic Gaussian of standard deviation ``width`` pixels, truncated at ``radius``."""
        check_positive(width, "width")
        offsets = np.arange(-radius, radius + 1)
        g = np.exp(-0.5 * (offsets / width) ** 2)
        return cls(radius, _normalize(np.outer(g, g)))

    def offsets(self):
        r = self.radius
        return [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]

    @property
    def is_delta(self) -> bool:
        return self.radius == 0 or self.weights[self.radius, self.radius] == 1.0


def _normalize(w: np.ndarray) -> np.ndarray:
    w = w / math.fsum(w.ravel())
    # push the rounding residue onto the centre so the sum is 1 to within one ulp
    r = w.shape[0] // 2
    w[r, r] += 1.0 - math.fsum(w.ravel())
    return w


@dataclass(frozen=True)
class SourceModel:
    kind: str
    n0: float
    modes: float = 1e4
    spread: PairKernel = field(default_factory=PairKernel.delta)

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise ValueError(f"unknown source kind {self.kind!r}; expected one of {SOURCE_KINDS}")
        check_nonnegative(self.n0, "n0")
        check_positive(self.modes, "modes")


@dataclass(frozen=True)
class ModeBudget:
    t_pump: float
    t_coh: float
    a_pix: float
    a_coh: float

    @property
    def warnings(self) -> list[str]:
        out = []
        if self.t_pump < self.t_coh:
            out.append("pump pulse shorter than coherence time")
        if self.a_pix < self.a_coh:
            out.append("pixel smaller than coherence area")
        return out


def mode_budget(b: ModeBudget) -> float:
    """Number of modes per pixel, temporal times spatial."""
    for name in ("t_pump", "t_coh", "a_pix", "a_coh"):
        check_positive(getattr(b, name), name)
    return (b.t_pump / b.t_coh) * (b.a_pix / b.a_coh)


def moments_oracle(source: SourceModel) -> tuple[float, float, float]:
    """Closed-form (mean, variance, excess noise) of one pre-detection pixel count.

    For twin sources the numbers describe either arm (and the pair count).
    A coherent_split source describes the undivided beam.
    """
    n0 = float(source.n0)
    if source.kind in ("coherent", "coherent_split"):
        return n0, n0, 0.0
    e = n0 / source.modes
    return n0, n0 * (1.0 + e), e


def _multithermal(rng: np.random.Generator, n0: float, modes: float, size) -> np.ndarray:
    if n0 == 0:
        return np.zeros(size, dtype=np.int64)
    rate = rng.gamma(shape=modes, scale=n0 / modes, size=size)
    return rng.poisson(rate).astype(np.int64)


def spread_counts(counts: np.ndarray, kernel: PairKernel, rng: np.random.Generator):
    """Redistribute each pixel's photons over the kernel offsets.

    Returns ``(spread, dropped)`` with ``spread.sum() + dropped == counts.sum()``;
    photons landing outside the frame are dropped.
    """
    if kernel.is_delta:
        return counts.copy(), 0
    h, w = counts.shape
    r = kernel.radius
    parts = rng.multinomial(counts.ravel(), kernel.weights.ravel()).reshape(h, w, -1)
    padded = np.zeros((h + 2 * r, w + 2 * r), dtype=np.int64)
    for j, (dy, dx) in enumerate(kernel.offsets()):
        padded[r + dy:r + dy + h, r + dx:r + dx + w] += parts[:, :, j]
    spread = padded[r:r + h, r:r + w].copy()
    dropped = int(padded.sum() - spread.sum())
    return spread, dropped


def _frame_pair(source: SourceModel, geometry: Geometry, seed: int, f: int):
    shape = (geometry.height, geometry.width)
    n = _multithermal(substream(seed, f, "pairs"), source.n0, source.modes, shape)
    idler = mirror_frames(n)
    idler, _ = spread_counts(idler, source.spread, substream(seed, f, "spread"))
    return n, idler


def gen_twin_pairs(source: SourceModel, geometry: Geometry, seed: int, n_jobs: int | None = 1):
    """Twin-beam pre-detection stacks ``(signal, idler)``.

    The idler is laid out on its own grid: before spreading,
    ``idler[f, H-1-r, W-1-c] == signal[f, r, c]``.
    """
    if source.kind != "twin":
        raise ValueError(f"gen_twin_pairs needs a twin source, got {source.kind!r}")
    seed = check_seed(seed)
    frames = map_frames(lambda f: _frame_pair(source, geometry, seed, f), geometry.n_frames, n_jobs)
    signal = np.stack([s for s, _ in frames])
    idler = np.stack([i for _, i in frames])
    return FrameStack(signal, "signal"), FrameStack(idler, "idler")


def gen_coherent(n0: float, geometry: Geometry, seed: int, n_jobs: int | None = 1) -> FrameStack:
    n0 = check_nonnegative(n0, "n0")
    seed = check_seed(seed)
    shape = (geometry.height, geometry.width)

    def frame(f):
        return substream(seed, f, "coherent").poisson(n0, size=shape).astype(np.int64)

    return FrameStack(np.stack(map_frames(frame, geometry.n_frames, n_jobs)), "single")


def gen_thermal(n0: float, modes: float, geometry: Geometry, seed: int,
                n_jobs: int | None = 1) -> FrameStack:
    n0 = check_nonnegative(n0, "n0")
    modes = check_positive(modes, "modes")
    seed = check_seed(seed)
    shape = (geometry.height, geometry.width)

    def frame(f):
        return _multithermal(substream(seed, f, "thermal"), n0, modes, shape)

    return FrameStack(np.stack(map_frames(frame, geometry.n_frames, n_jobs)), "single")


def thin_counts(counts: np.ndarray, p, seed: int, tag: str, n_jobs: int | None = 1) -> np.ndarray:
    """Independent per-photon survival with probability ``p`` (scalar or per-pixel map)."""
    counts = np.asarray(counts, dtype=np.int64)
    p = np.broadcast_to(np.asarray(p, dtype=np.float64), counts.shape[1:])

    def frame(f):
        return substream(seed, f, tag).binomial(counts[f], p).astype(np.int64)

    return np.stack(map_frames(frame, counts.shape[0], n_jobs))


def split_frames(stack: FrameStack, transmit: float, seed: int, n_jobs: int | None = 1):
    """Beam splitter: each photon goes to the first output with probability ``transmit``."""
    transmit = check_probability(transmit, "transmit")
    seed = check_seed(seed)
    out1 = thin_counts(stack.counts, transmit, seed, "split", n_jobs)
    out2 = stack.counts - out1
    return FrameStack(out1, stack.arm), FrameStack(out2, stack.arm)


def gen_coherent_split(n0: float, geometry: Geometry, seed: int, transmit: float = 0.5,
                       n_jobs: int | None = 1):
    """Split-coherent pair laid out like twin stacks (second output mirrored onto the idler grid).

    ``n0`` is the mean of the undivided beam.
    """
    beam = gen_coherent(n0, geometry, seed, n_jobs)
    out1, out2 = split_frames(beam, transmit, seed, n_jobs)
    return FrameStack(out1.counts, "signal"), FrameStack(mirror_frames(out2.counts).copy(), "idler")


def generate(source: SourceModel, geometry: Geometry, seed: int, n_jobs: int | None = 1):
    """Dispatch on ``source.kind``; returns ``(signal, idler)`` for paired kinds, else one stack."""
    if source.kind == "twin":
        return gen_twin_pairs(source, geometry, seed, n_jobs)
    if source.kind == "coherent_split":
        return gen_coherent_split(source.n0, geometry, seed, n_jobs=n_jobs)
    if source.kind == "coherent":
        return gen_coherent(source.n0, geometry, seed, n_jobs)
    return gen_thermal(source.n0, source.modes, geometry, seed, n_jobs)
