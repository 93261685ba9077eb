"""irspot: infrared light-spot perturbations against face-embedding models.

Synthesis of parametric Gaussian light spots on aligned face images, Adam
search for impersonation/dodging layouts against pluggable embedding
oracles, a calibration analyzer for realized spots, a large-scale study
runner, a CLI, and an HTTP session service for interactive tuning.
"""

from .attack import (
    AttackConfig,
    AttackResult,
    Bounds,
    fd_gradient,
    init_spot_config,
    objective,
    run_attack,
    run_dodge,
    whitebox_gradient,
)
from .calibration import CalibrationReport, SpotFinding, calibrate_once
from .dodging import (
    LandmarkResult,
    ReferenceLandmarkOracle,
    check_dodge_embedding,
    check_dodge_landmark,
    flood_illuminate,
)
from .estimators import DodgingAttack, ImpersonationAttack, SpotPerturbation
from .image import diff, load_image, resize_bilinear, save_image
from .oracle import (
    DEFAULT_THRESHOLD,
    Embedding,
    HttpEmbeddingOracle,
    OracleConfig,
    OracleError,
    ReferenceEmbeddingOracle,
    SubprocessEmbeddingOracle,
    distance,
    make_embedding_oracle,
    same_person,
)
from .spots import (
    DEFAULT_COLOR_RATIO,
    PerturbationConfig,
    SpotParams,
    colorize,
    half_brightness_radius,
    render_field,
    spot_brightness,
    spot_jacobian,
    synthesize,
)
from .study import StudyConfig, radiated_power, run_study
from .validation import ValidationError

__version__ = "0.1.0"
