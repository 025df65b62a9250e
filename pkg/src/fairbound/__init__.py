"""Fairness metrics, LP-based fairness guarantees and MMD-regularized representations."""

from fairbound.core import (
    BaseRates,
    Dataset,
    EmptyGroup,
    FairboundError,
    InfeasibleCoefficients,
    MalformedData,
    NumericalFailure,
    PredictionRecord,
    Predictions,
    TooFewSamples,
    base_rates,
    validate_dataset,
)
from fairbound.bounds import (
    NOTIONS,
    GuaranteeReport,
    SubpopQuad,
    bound_curve,
    calibration_lower_bound,
    guarantee,
    guarantee_report,
    tradeoff_beta_lower_bound,
)
from fairbound.metrics import (
    FairnessReport,
    ScoreBinning,
    categorical_fairness,
    fairness_report,
    muc,
    tvd_histogram,
)
from fairbound.mmd import KernelSpec, mmd2_biased, mmd2_unbiased
from fairbound.learn import (
    EncoderModel,
    TrainConfig,
    estimate_alpha,
    estimate_beta,
    evaluate_representation,
    train_fair_encoder,
)

__version__ = "0.1.0"
