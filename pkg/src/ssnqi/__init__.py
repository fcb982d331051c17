"""Monte-Carlo simulation and analysis of sub-shot-noise imaging with twin beams."""

from .estimators import (
    AbsorptionImager,
    AlphaMap,
    CenterCalibrator,
    CorrelationAnalyzer,
    FlatField,
    FrameClass,
    FrameClassifier,
    Region,
    ShiftVector,
    SigmaEstimate,
    SnrReport,
    alpha_cl,
    alpha_dcl,
    alpha_q,
    calibrate_center,
    classify_frames,
    estimate_excess_noise,
    estimate_sigma,
    flat_field,
    r_ratio,
    snr_map,
)
from .frames import FramePair, FrameStack, Geometry, read_fstk, write_fstk
from .optics import (
    DetectionChain,
    DetectorModel,
    ObjectMask,
    add_background,
    apply_loss,
    apply_object,
    bin_pixels,
    pi_glyph,
    run_chain,
)
from .statgen import (
    ModeBudget,
    PairKernel,
    SourceModel,
    gen_coherent,
    gen_coherent_split,
    gen_thermal,
    gen_twin_pairs,
    mode_budget,
    moments_oracle,
    split_frames,
)
from .theory import TheoryPoint, excess_noise_multithermal, r_cl, r_dcl, r_thermal, sigma_theory
from .validation import ConfigError, DataError

__version__ = "0.1.0"
