"""Monte-Carlo study of how random sensor placement affects energy-based
point-source localization: forward sensing chain, ML estimation,
error bounds, and localization-outage statistics over geometry ensembles.
"""

__version__ = "0.1.0"

from .errors import (
    DegenerateGeometry,
    EmptySubset,
    PackingFailure,
    ParseError,
    QuadratureFailure,
    SingularFim,
    ValidationError,
)
from .geometry import (
    NetworkGeometry,
    SourceParams,
    count_within,
    distance,
    distances,
    load_geometry,
    sample_geometry,
    sample_source_position,
    save_geometry,
)
from .signal_model import (
    SensorEnsembleConfig,
    quantize,
    received_power,
    sense,
    simulate_round,
    simulate_rounds,
    transmit_and_detect,
)
from .likelihood import (
    EstimateResult,
    SearchOptions,
    log_likelihood,
    marginal_energy_cdf,
    marginal_energy_pdf,
    ml_estimate,
    p_one,
)
from .crlb import (
    CrlbResult,
    ThresholdResult,
    crlb_sgle,
    fisher_information,
    g_matrix,
    mixture_integral,
    optimize_thresholds,
)
from .montecarlo import (
    EnsembleSpec,
    GeometryTrialResult,
    OutageCurve,
    build_ccdf,
    conditioned_ccdf,
    default_gamma_grid,
    empirical_sgle,
    outage_ccdf,
    run_ensemble,
)

__all__ = [name for name in dir() if not name.startswith("_")]
