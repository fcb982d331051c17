"""Frame containers, the mirrored pixel map, RNG substreams and the FSTK1 format."""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .validation import DataError, check_stack_array

ARMS = ("single", "signal", "idler")
ARM_TAGS = {"single": 0, "signal": 1, "idler": 2}

FSTK_MAGIC = b"FSTK1"
FSTK_DTYPE_U32 = 4
_FSTK_HEADER = struct.Struct("<5sIIIBB")


@dataclass(frozen=True)
class Geometry:
    width: int
    height: int
    n_frames: int

    def __post_init__(self):
        for name in ("width", "height", "n_frames"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value <= 0:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_frames, self.height, self.width)

    def mirror(self, row, col):
        """Mirrored pixel index m(x) as (row, col)."""
        return self.height - 1 - np.asarray(row), self.width - 1 - np.asarray(col)


def mirror_frames(counts: np.ndarray) -> np.ndarray:
    """Reflect the last two axes so that out[..., r, c] == counts[..., H-1-r, W-1-c]."""
    return counts[..., ::-1, ::-1]


@dataclass
class FrameStack:
    """Photon counts of one arm, shape (n_frames, height, width)."""

    counts: np.ndarray
    arm: str = "single"

    def __post_init__(self):
        if self.arm not in ARM_TAGS:
            raise ValueError(f"unknown arm {self.arm!r}")
        self.counts = check_stack_array(self.counts)

    @property
    def geometry(self) -> Geometry:
        n, h, w = self.counts.shape
        return Geometry(w, h, n)

    @property
    def n_frames(self) -> int:
        return self.counts.shape[0]

    def with_counts(self, counts: np.ndarray) -> "FrameStack":
        return FrameStack(counts, self.arm)

    def select(self, frames) -> "FrameStack":
        return FrameStack(self.counts[np.asarray(frames)], self.arm)


@dataclass
class FramePair:
    """Signal and idler stacks; the idler is stored on its own (mirrored) grid."""

    signal: FrameStack
    idler: FrameStack

    def __post_init__(self):
        if self.signal.counts.shape != self.idler.counts.shape:
            raise DataError(
                f"signal {self.signal.counts.shape} and idler {self.idler.counts.shape} shapes differ"
            )

    @property
    def geometry(self) -> Geometry:
        return self.signal.geometry

    @property
    def n_frames(self) -> int:
        return self.signal.n_frames

    def select(self, frames) -> "FramePair":
        return FramePair(self.signal.select(frames), self.idler.select(frames))


def substream(seed: int, frame: int, tag: str) -> np.random.Generator:
    """Independent generator for one (master seed, frame index, stream tag) triple.

    The tag is hashed with CRC-32 so the mapping is stable across runs and
    platforms; SeedSequence does the 64-bit mixing.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(frame), zlib.crc32(tag.encode())))
    return np.random.default_rng(ss)


def derive_seed(seed: int, tag: str) -> int:
    """Child master seed for a pipeline stage."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(tag.encode()),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def write_fstk(path, stack: FrameStack) -> None:
    counts = stack.counts
    if counts.dtype.kind == "f":
        if not np.all(counts == np.round(counts)):
            raise DataError("FSTK1 stores integer counts only")
    if counts.size and (counts.min() < 0 or counts.max() > np.iinfo(np.uint32).max):
        raise DataError("counts out of u32 range")
    n, h, w = counts.shape
    header = _FSTK_HEADER.pack(FSTK_MAGIC, w, h, n, ARM_TAGS[stack.arm], FSTK_DTYPE_U32)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(counts, dtype="<u4").tobytes())


def read_fstk(path) -> FrameStack:
    raw = Path(path).read_bytes()
    if len(raw) < _FSTK_HEADER.size:
        raise DataError(f"{path}: truncated FSTK1 header")
    magic, w, h, n, arm_tag, dtype = _FSTK_HEADER.unpack_from(raw)
    if magic != FSTK_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if dtype != FSTK_DTYPE_U32:
        raise DataError(f"{path}: unsupported dtype code {dtype}")
    arm = {v: k for k, v in ARM_TAGS.items()}.get(arm_tag)
    if arm is None:
        raise DataError(f"{path}: unknown arm tag {arm_tag}")
    expected = _FSTK_HEADER.size + 4 * w * h * n
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(raw)}")
    counts = np.frombuffer(raw, dtype="<u4", offset=_FSTK_HEADER.size).reshape(n, h, w)
    return FrameStack(counts.astype(np.int64), arm)


def map_frames(func, n_frames: int, n_jobs: int | None = 1) -> list:
    """Evaluate ``func(frame_index)`` for every frame, optionally on a thread pool.

    Results come back in frame order, so the output never depends on n_jobs.
    """
    if n_jobs is None or n_jobs == 1 or n_frames < 2:
        return [func(f) for f in range(n_frames)]
    from concurrent.futures import ThreadPoolExecutor

    workers = None if n_jobs == -1 else int(n_jobs)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, range(n_frames)))
