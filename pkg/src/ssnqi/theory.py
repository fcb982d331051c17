"""Closed-form SNR ratios between quantum and classical absorption imaging."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TheoryPoint:
    alpha: float
    sigma: float
    excess: float = 0.0
    n_th: float = 0.0
    m_th: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.excess < -1:
            raise ValueError(f"excess noise must be >= -1, got {self.excess}")
        if self.n_th < 0 or self.m_th <= 0:
            raise ValueError("thermal parameters need n_th >= 0 and m_th > 0")

    @property
    def quantum_noise(self) -> float:
        """Variance of the quantum absorption estimate, in units of 1/<N>."""
        a = self.alpha
        return a * a * self.excess + 2.0 * self.sigma * (1.0 - a) + a


def _denominator(p: TheoryPoint) -> float:
    d = p.quantum_noise
    if not d > 0:
        raise ValueError(f"non-positive noise term {d} for {p}")
    return d


def sigma_theory(eta: float) -> float:
    """Noise-reduction factor of balanced twin beams after transmission ``eta``."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    return 1.0 - eta


def r_dcl(p: TheoryPoint) -> float:
    """SNR gain of quantum imaging over differential classical imaging."""
    return float(np.sqrt((2.0 - p.alpha) / _denominator(p)))


def r_cl(p: TheoryPoint) -> float:
    """SNR gain of quantum imaging over direct classical imaging with a Poisson source."""
    return float(np.sqrt((1.0 - p.alpha) / _denominator(p)))


def r_thermal(p: TheoryPoint) -> float:
    """SNR gain over differential imaging with multithermal light."""
    a = p.alpha
    num = a * a * excess_noise_multithermal(p.n_th, p.m_th) + 2.0 - a
    return float(np.sqrt(num / _denominator(p)))


def excess_noise_multithermal(n: float, m: float) -> float:
    if m <= 0:
        raise ValueError(f"mode number must be > 0, got {m}")
    if n < 0:
        raise ValueError(f"mean photon number must be >= 0, got {n}")
    return n / m


def sigma_threshold_cl(alpha: float, excess: float = 0.0) -> float:
    """Largest sigma for which quantum imaging beats direct classical imaging.

    Solves (1 - a) = a^2 E + 2 sigma (1 - a) + a for sigma.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    return (1.0 - 2.0 * alpha - alpha * alpha * excess) / (2.0 * (1.0 - alpha))


def sigma_threshold_dcl(alpha: float, excess: float = 0.0) -> float:
    """Largest sigma for which quantum imaging beats differential classical imaging."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    return (2.0 - 2.0 * alpha - alpha * alpha * excess) / (2.0 * (1.0 - alpha))


def tabulate(sigmas, alpha: float, excess: float = 0.0) -> list[dict]:
    rows = []
    for s in sigmas:
        p = TheoryPoint(alpha=alpha, sigma=float(s), excess=excess)
        rows.append({"sigma": float(s), "R_cl_theory": r_cl(p), "R_dcl_theory": r_dcl(p)})
    return rows


def write_curves_csv(path, sigmas, alpha: float, excess: float = 0.0) -> list[dict]:
    """Write the theory overlay for an R-versus-sigma plot."""
    rows = tabulate(sigmas, alpha, excess)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["sigma", "R_cl_theory", "R_dcl_theory"])
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) for k, v in row.items()})
    return rows
