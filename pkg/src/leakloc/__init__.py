"""Near-field beamfocusing leakage: simulation, Bayesian bounds, estimation.

A base station that beamfocuses at a user in its radiative near field leaks
a deterministic power pattern toward far-field sensors. This package models
that leakage (exact and closed-form backends), simulates power-only sensor
observations, evaluates the Bayesian Cramer-Rao bound on locating the focal
point, and implements two estimators: a grid-search least-squares baseline
and a permutation-invariant set network trained from scratch.
"""

__version__ = "0.1.0"

from .deepsets import (
    DeepSetsModel,
    FeatureNormalizer,
    SetSample,
    TrainConfig,
    TrainHistory,
    TrainingDiverged,
    attention_weights,
    box_center_mse,
    evaluate_mse,
    load_model,
    make_dataset,
    predict_batch,
    save_model,
)
from .estimators import (
    EstimateResult,
    GridSpec,
    TrialRecord,
    grid_search,
    model_matrix,
    model_vector,
    read_trials_csv,
    write_trials_csv,
)
from .fisher import (
    BcrlbResult,
    BetaPrior,
    Fim2,
    bcrlb,
    bcrlb_from_mean_fim,
    conditional_fim,
    fim_terms,
    fisher_info_nc,
    fisher_info_nc_batch,
    prior_curvature,
    prior_curvature_closed_form,
)
from .geometry import (
    ArrayGeometry,
    SensorLocation,
    SensorSet,
    UeLocation,
    element_offsets,
    ff_steering,
    los_channel,
    mrt_beamformer,
    nf_steering,
    pathloss,
)
from .harness import (
    DeepSetsProfile,
    Scenario,
    SweepResult,
    SweepRow,
    dbm_to_watts,
    read_dataset,
    read_sweep,
    run_bcrlb_sweep,
    run_mse_sweep,
    sample_sensor_set,
    scenario_from_config,
    scenario_to_config,
    watts_to_dbm,
    write_dataset,
    write_sweep,
)
from .leakage import (
    DEFAULT_N_IMAGES,
    FresnelArgs,
    GainGradient,
    LeakageBackend,
    LeakagePattern,
    fresnel_args,
    gain_matrix,
    gain_profile,
    gains_with_gradients,
    leakage_gain,
    leakage_gradient,
    leakage_pattern,
)
from .observation import (
    NoiseModel,
    NoncentralChiSq2,
    ObservationBlock,
    loglik,
    noncentrality,
    sample_block,
    score,
    write_blocks_csv,
)
from .specfun import FresnelPair, bessel_i1_over_i0, fresnel, log_bessel_i0
