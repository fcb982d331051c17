"""End-to-end runs: simulate, analyse, sweep sigma, and the pi-glyph imaging demo."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import theory
from .config import ExperimentConfig
from .estimators import (
    AbsorptionImager,
    AlphaMap,
    CorrelationAnalyzer,
    FrameClass,
    Region,
    ShiftVector,
    SigmaEstimate,
    classify_frames,
    default_shift,
    excess_noise_per_frame,
    r_ratio,
    reference_level,
    shift_valid_mask,
    snr_map,
)
from .frames import FramePair, FrameStack, derive_seed, read_fstk, write_fstk
from .optics import ObjectMask, pi_glyph, run_chain
from .pgm import write_pgm
from .statgen import SourceModel, generate
from .validation import DataError

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MIN_SIGMA_PIXELS = 64


# --------------------------------------------------------------------------- simulate


def simulate(cfg: ExperimentConfig, mask: ObjectMask | None = None, n_jobs: int | None = 1) -> FramePair:
    """Generate and detect one run; the returned pair is on the (binned) detector grid."""
    seed = cfg.seed
    src = cfg.source
    out = generate(src, cfg.geometry, derive_seed(seed, "source"), n_jobs)
    if src.kind in ("coherent", "thermal"):
        # single-beam kinds: the idler arm is an independent draw of the same law
        second = generate(src, cfg.geometry, derive_seed(seed, "source/idler"), n_jobs)
        out = (FrameStack(out.counts, "signal"), FrameStack(second.counts[:, ::-1, ::-1].copy(), "idler"))
    signal, idler = out
    return run_chain(signal, idler, mask, cfg.detector, derive_seed(seed, "chain"), n_jobs)


def write_run(cfg: ExperimentConfig, pair: FramePair, out_dir) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_fstk(out_dir / "signal.fstk", pair.signal)
    write_fstk(out_dir / "idler.fstk", pair.idler)
    manifest = {
        "format_version": FORMAT_VERSION,
        "seed": cfg.seed,
        "config": cfg.to_dict() | {"seed": cfg.seed},
        "files": {"signal": "signal.fstk", "idler": "idler.fstk"},
        "frames": {"n_frames": pair.n_frames, "height": pair.signal.counts.shape[1],
                   "width": pair.signal.counts.shape[2]},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_pair(signal_path, idler_path) -> FramePair:
    signal, idler = read_fstk(signal_path), read_fstk(idler_path)
    if signal.arm != "signal" or idler.arm != "idler":
        raise DataError(f"expected signal/idler stacks, got {signal.arm}/{idler.arm}")
    return FramePair(signal, idler)


# --------------------------------------------------------------------------- analyse


def bin_mask(mask: ObjectMask | None, factor: int) -> np.ndarray | None:
    if mask is None:
        return None
    a = mask.alpha
    h, w = a.shape
    return a.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


@dataclass
class Regions:
    interior: Region
    sigma: Region
    object: Region | None
    alpha: float


def analysis_regions(shape, alpha_map: np.ndarray | None, margin: int,
                     shift: ShiftVector) -> Regions:
    """Interior, object-free (for sigma) and uniform-object (for SNR) pixel sets."""
    h, w = shape
    interior = Region.interior(h, w, margin)
    if alpha_map is None or not np.any(alpha_map[interior.mask] > 0):
        return Regions(interior, interior, None, 0.0)
    clear = interior.mask & (alpha_map == 0)
    sigma = Region(clear) if clear.sum() >= MIN_SIGMA_PIXELS else interior
    top = float(alpha_map[interior.mask].max())
    obj = interior.mask & np.isclose(alpha_map, top) & shift_valid_mask(shape, shift)
    return Regions(interior, sigma, Region(obj) if obj.any() else None, top)


@dataclass
class AnalysisReport:
    sigmas: list[SigmaEstimate]
    excess: np.ndarray
    classes: list[FrameClass]
    alpha: float
    n_i_ref: float
    shift: ShiftVector
    mean_maps: dict[str, np.ndarray] = field(default_factory=dict)
    sigma_mean: float = float("nan")
    sigma_sem: float = float("nan")

    @property
    def excess_mean(self) -> float:
        return math.fsum(self.excess) / len(self.excess)


def analysis_margin(cfg: ExperimentConfig) -> int:
    m = cfg.analysis.get("margin")
    if m is not None:
        return int(m)
    return -(-cfg.source.spread.radius // cfg.detector.bin_factor)


def analysis_shift(cfg: ExperimentConfig) -> ShiftVector:
    s = cfg.analysis.get("shift")
    if s is not None:
        return ShiftVector(int(s[0]), int(s[1]))
    r = -(-cfg.source.spread.radius // cfg.detector.bin_factor)
    return default_shift(r)


def class_ratios(maps: dict[str, AlphaMap], members, region: Region):
    """R_cl and R_dcl (with standard errors) over one class of frames."""
    idx = np.asarray(members)
    snr = {k: snr_map(m.select(idx), region) for k, m in maps.items()}
    r_cl = r_ratio(snr["q"], snr["cl"], region)
    r_dcl = r_ratio(snr["q"], snr["dcl"], region)
    return r_cl, r_dcl


def analyze(pair: FramePair, cfg: ExperimentConfig, mask: ObjectMask | None = None) -> AnalysisReport:
    opts = cfg.analysis
    shape = pair.signal.counts.shape[1:]
    shift = analysis_shift(cfg)
    regions = analysis_regions(shape, bin_mask(mask, cfg.detector.bin_factor), analysis_margin(cfg), shift)

    corr = CorrelationAnalyzer(flat_field=bool(opts["flat_field"]) and pair.n_frames >= 2)
    corr.fit(pair, region=regions.sigma)
    excess = excess_noise_per_frame(pair.idler, regions.interior)

    imager = AbsorptionImager(shift=shift, kernel_radius=analysis_margin(cfg)).fit(pair.idler, region=regions.interior)
    maps = imager.transform(pair)

    classes: list[FrameClass] = []
    if regions.object is not None and pair.n_frames >= 2:
        classes = classify_frames(corr.sigmas_, int(opts["n_bins"]), int(opts["min_members"]))
        for c in classes:
            (c.r_cl, c.r_cl_err), (c.r_dcl, c.r_dcl_err) = class_ratios(maps, c.members, regions.object)
    return AnalysisReport(
        sigmas=corr.sigmas_,
        excess=excess,
        classes=classes,
        alpha=regions.alpha,
        n_i_ref=imager.n_i_ref_,
        shift=shift,
        mean_maps={k: m.mean_map() for k, m in maps.items()},
        sigma_mean=corr.sigma_mean_,
        sigma_sem=corr.sigma_sem_,
    )


def class_theory(report: AnalysisReport, c: FrameClass) -> tuple[float, float]:
    e = math.fsum(report.excess[list(c.members)]) / c.n_frames
    p = theory.TheoryPoint(alpha=report.alpha, sigma=c.sigma_j, excess=max(e, -1.0))
    return theory.r_cl(p), theory.r_dcl(p)


# --------------------------------------------------------------------------- outputs


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


SIGMA_COLUMNS = ["frame_id", "sigma", "mean_signal", "mean_idler"]
CLASS_COLUMNS = ["j", "sigma_j", "n_frames", "R_cl", "R_cl_err", "R_dcl", "R_dcl_err",
                 "R_cl_theory", "R_dcl_theory"]
SWEEP_COLUMNS = ["sigma_target", "eta", "sigma", "sigma_sem", "excess", "R_cl", "R_cl_err",
                 "R_dcl", "R_dcl_err", "R_cl_theory", "R_dcl_theory"]


def _write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def write_sigma_csv(path, sigmas: list[SigmaEstimate]) -> None:
    _write_csv(path, SIGMA_COLUMNS, [s.__dict__ for s in sigmas])


def class_rows(report: AnalysisReport) -> list[dict]:
    rows = []
    for c in report.classes:
        t_cl, t_dcl = class_theory(report, c)
        rows.append({"j": c.j, "sigma_j": c.sigma_j, "n_frames": c.n_frames, "R_cl": c.r_cl,
                     "R_cl_err": c.r_cl_err, "R_dcl": c.r_dcl, "R_dcl_err": c.r_dcl_err,
                     "R_cl_theory": t_cl, "R_dcl_theory": t_dcl})
    return rows


def write_class_csv(path, report: AnalysisReport) -> list[dict]:
    rows = class_rows(report)
    _write_csv(path, CLASS_COLUMNS, rows)
    return rows


def alpha_scale(alpha: float) -> tuple[float, float]:
    """Gray-level window shared by all schemes of one rendering."""
    a = max(float(alpha), 0.05)
    return -0.5 * a, 1.5 * a


def write_alpha_pgm(path, alpha_map: np.ndarray, lo: float, hi: float, meta: dict | None = None) -> None:
    """Render an absorption map to 16-bit PGM with gray = (alpha - lo) / (hi - lo) * 65535."""
    a = np.nan_to_num(np.asarray(alpha_map, dtype=np.float64), nan=lo)
    gray = np.rint(np.clip((a - lo) / (hi - lo), 0.0, 1.0) * 65535).astype(np.uint16)
    write_pgm(path, gray, 65535)
    side = {"maxval": 65535, "alpha_at_0": lo, "alpha_at_maxval": hi,
            "alpha_per_gray": (hi - lo) / 65535, "formula": "alpha = alpha_at_0 + gray * alpha_per_gray"}
    side.update(meta or {})
    Path(path).with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")


def write_analysis(report: AnalysisReport, out_dir) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_sigma_csv(out_dir / "sigma.csv", report.sigmas)
    rows = write_class_csv(out_dir / "classes.csv", report)
    lo, hi = alpha_scale(report.alpha)
    for scheme, m in report.mean_maps.items():
        write_alpha_pgm(out_dir / f"alpha_{scheme}.pgm", m, lo, hi,
                        {"scheme": scheme, "n_frames": len(report.sigmas)})
    summary = {"sigma_mean": report.sigma_mean, "sigma_sem": report.sigma_sem,
               "excess_mean": report.excess_mean, "n_i_ref": report.n_i_ref,
               "shift": list(report.shift.as_tuple()), "alpha": report.alpha, "classes": rows}
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


# --------------------------------------------------------------------------- sweep


@dataclass
class SweepPoint:
    sigma_target: float
    eta: float
    sigma: float
    sigma_sem: float
    excess: float
    R_cl: float
    R_cl_err: float
    R_dcl: float
    R_dcl_err: float
    R_cl_theory: float
    R_dcl_theory: float


def sweep_config(cfg: ExperimentConfig, eta: float, seed: int) -> ExperimentConfig:
    """Configuration for one sweep point with the detected photon budget held fixed."""
    n0 = float(cfg.sweep["detected_mean"]) / eta
    src = SourceModel(cfg.source.kind, n0, cfg.source.modes, cfg.source.spread)
    det = replace(cfg.detector, eta_signal=eta, eta_idler=eta)
    analysis = dict(cfg.analysis, n_bins=1, min_members=2)
    return replace(cfg, source=src, detector=det, analysis=analysis, seed=seed)


def sweep_etas(cfg: ExperimentConfig, sigmas=None, etas=None) -> list[tuple[float, float]]:
    """(sigma_target, eta) pairs; sigma targets map to eta = 1 - sigma."""
    if sigmas is None and etas is None:
        sigmas = cfg.sweep.get("sigmas")
        etas = cfg.sweep.get("etas")
    if sigmas is not None:
        pts = [(float(s), 1.0 - float(s)) for s in sigmas]
    elif etas is not None:
        pts = [(1.0 - float(e), float(e)) for e in etas]
    else:
        raise DataError("sweep needs a sigma or eta list")
    if len(pts) < 2:
        raise DataError("sweep needs at least 2 points")
    for s, e in pts:
        if not 0.0 < e <= 1.0:
            raise DataError(f"sweep point sigma={s} needs 0 < eta <= 1")
    return pts


def run_sweep(cfg: ExperimentConfig, sigmas=None, etas=None, n_jobs: int | None = 1) -> list[SweepPoint]:
    mask = cfg.mask()
    if mask is None:
        raise DataError("a sweep needs an object (set object.kind and object.alpha)")
    points = []
    for k, (target, eta) in enumerate(sweep_etas(cfg, sigmas, etas)):
        pcfg = sweep_config(cfg, eta, derive_seed(cfg.seed, f"sweep/{k}"))
        pair = simulate(pcfg, mask, n_jobs)
        report = analyze(pair, pcfg, mask)
        if not report.classes:
            raise DataError("sweep point produced no object region")
        c = report.classes[0]
        t_cl, t_dcl = class_theory(report, c)
        points.append(SweepPoint(target, eta, report.sigma_mean, report.sigma_sem, report.excess_mean,
                                 c.r_cl, c.r_cl_err, c.r_dcl, c.r_dcl_err, t_cl, t_dcl))
        log.info("sweep sigma=%.3f R_cl=%.3f R_dcl=%.3f", report.sigma_mean, c.r_cl, c.r_dcl)
    return points


def write_sweep_csv(path, points: list[SweepPoint]) -> None:
    _write_csv(path, SWEEP_COLUMNS, [p.__dict__ for p in points])


def crossing(x, y, level: float = 1.0, extrapolate: bool = False) -> float:
    """First x where y crosses ``level`` by linear interpolation between sorted points.

    With ``extrapolate`` the last two points are extended when no bracket exists.
    """
    order = np.argsort(x)
    x = np.asarray(x, dtype=np.float64)[order]
    y = np.asarray(y, dtype=np.float64)[order] - level
    for k in range(len(x) - 1):
        if y[k] == 0:
            return float(x[k])
        if y[k] * y[k + 1] < 0:
            return float(x[k] - y[k] * (x[k + 1] - x[k]) / (y[k + 1] - y[k]))
    if y[-1] == 0:
        return float(x[-1])
    if extrapolate and y[-1] != y[-2]:
        return float(x[-1] - y[-1] * (x[-1] - x[-2]) / (y[-1] - y[-2]))
    return float("nan")


# --------------------------------------------------------------------------- pi demo


@dataclass
class DemoResult:
    maps: dict[str, np.ndarray]
    residual_rms: dict[str, float]
    contrast: dict[str, float]
    contrast_se: dict[str, float]
    sigma: float
    lo: float
    hi: float


def demo_pi(cfg: ExperimentConfig, n_jobs: int | None = 1) -> DemoResult:
    """Averaged absorption maps of the pi glyph for the three schemes at the same photon budget."""
    if cfg.object["kind"] != "pi":
        cfg = replace(cfg, object={"kind": "pi", "alpha": cfg.object.get("alpha", 0.05)})
    mask = cfg.mask()
    pair = simulate(cfg, mask, n_jobs)
    shape = pair.signal.counts.shape[1:]
    shift = analysis_shift(cfg)
    margin = analysis_margin(cfg)
    truth = bin_mask(mask, cfg.detector.bin_factor)
    # glyph footprint from the geometry alone, so contrast is defined even at alpha = 0
    footprint = bin_mask(pi_glyph(cfg.geometry.height, cfg.geometry.width, 1.0), cfg.detector.bin_factor) > 0
    interior = Region.interior(*shape, margin)
    valid = interior.mask & shift_valid_mask(shape, shift)
    glyph = valid & footprint
    background = valid & ~footprint

    flat = bool(cfg.analysis["flat_field"]) and pair.n_frames >= 2
    sigma_region = Region(background) if background.sum() >= MIN_SIGMA_PIXELS else interior
    corr = CorrelationAnalyzer(flat_field=flat).fit(pair, region=sigma_region)
    # reference from the object-free background of the idler arm
    ref = reference_level(pair.idler, Region(background) if background.any() else interior)
    imager = AbsorptionImager(shift=shift, kernel_radius=margin)
    imager.n_i_ref_, imager.shift_ = ref, shift
    maps = {k: m.mean_map() for k, m in imager.transform(pair).items()}

    residual, contrast, contrast_se = {}, {}, {}
    for k, m in maps.items():
        residual[k] = float(np.sqrt(np.mean((m[valid] - truth[valid]) ** 2)))
        if glyph.any() and background.any():
            g, b = m[glyph], m[background]
            contrast[k] = float(g.mean() - b.mean())
            contrast_se[k] = float(np.sqrt(g.var(ddof=1) / g.size + b.var(ddof=1) / b.size)) \
                if g.size > 1 and b.size > 1 else float("nan")
    lo, hi = alpha_scale(float(truth.max()))
    return DemoResult(maps, residual, contrast, contrast_se, corr.sigma_mean_, lo, hi)


def write_demo(result: DemoResult, out_dir) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for k, m in result.maps.items():
        write_alpha_pgm(out_dir / f"pi_{k}.pgm", m, result.lo, result.hi, {"scheme": k})
    summary = {"sigma": result.sigma, "residual_rms": result.residual_rms,
               "contrast": result.contrast, "contrast_se": result.contrast_se}
    (out_dir / "demo.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
