"""Correlation functions of laser-mixed resonance fluorescence.

Two independent pipelines over the same physics:

* quantum-regression evaluation of multi-photon correlation functions of a
  driven two-level emitter whose emission is interfered with the driving
  laser (``dynamics``, ``correlators``, ``sweeps``);
* Monte Carlo quantum-jump click streams and time-tag correlation
  histograms (``trajectories``, ``tagcorr``).
"""

from .correlators import (
    CorrelationCurve,
    CorrelationMap3,
    CorrelatorError,
    DetectorRole,
    MixConfig,
    default_delay_grid,
    g1,
    g2,
    g2_terms_coco,
    g2_terms_crossco,
    g3_map,
    gn_zero_delay,
    intensity,
    irf_convolve,
)
from .dynamics import (
    DensityMatrix,
    DynamicsError,
    Superoperator,
    SystemParams,
    build_liouvillian,
    evolve_state,
    propagator,
    steady_state,
)
from .sweeps import (
    SweepError,
    SweepResult,
    SweepSpec,
    iso_contour,
    run_sweep,
)
from .tagcorr import (
    EmptyChannelError,
    HistogramResult,
    HistogramResult2,
    TagFileError,
    correlate2,
    correlate3,
    read_tags,
    write_tags,
)
from .trajectories import (
    DetectorChannelSpec,
    TagStream,
    build_jump_model,
    derive_lo_amplitude,
    simulate_stream,
)

__version__ = "0.1.0"

__all__ = [
    "CorrelationCurve",
    "CorrelationMap3",
    "CorrelatorError",
    "DensityMatrix",
    "DetectorChannelSpec",
    "DetectorRole",
    "DynamicsError",
    "EmptyChannelError",
    "HistogramResult",
    "HistogramResult2",
    "MixConfig",
    "Superoperator",
    "SweepError",
    "SweepResult",
    "SweepSpec",
    "SystemParams",
    "TagFileError",
    "TagStream",
    "build_jump_model",
    "build_liouvillian",
    "correlate2",
    "correlate3",
    "default_delay_grid",
    "derive_lo_amplitude",
    "evolve_state",
    "g1",
    "g2",
    "g2_terms_coco",
    "g2_terms_crossco",
    "g3_map",
    "gn_zero_delay",
    "intensity",
    "irf_convolve",
    "iso_contour",
    "propagator",
    "read_tags",
    "run_sweep",
    "simulate_stream",
    "steady_state",
    "write_tags",
    "__version__",
]
