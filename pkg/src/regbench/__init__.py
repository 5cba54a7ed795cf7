"""regbench: a benchmark engine for limited-area weather forecasting.

Gridded regional states, boundary-conditioned autoregressive rollouts of
built-in or external forecasters, elucidated-diffusion ensembles, and
latitude-weighted deterministic and probabilistic verification.
"""

__version__ = "0.1.0"

from .baselines import (
    ClimatologyTable,
    climatology_forecast,
    fit_climatology,
    persistence_forecast,
)
from .conditioning import (
    BoundarySpec,
    apply_boundary_forcing,
    bilinear_upsample,
    concat_conditioning,
    crop_to_region,
)
from .dataset import (
    DatasetManifest,
    NormalizationStats,
    SyntheticConfig,
    build_splits,
    coarse_companion,
    compute_normalization_stats,
    denormalize,
    generate_synthetic_dataset,
    load_manifest,
    normalize,
)
from .edm import (
    NoiseSchedule,
    churn_gamma,
    edm_denoising_loss,
    generate_ensemble,
    sample_dpmpp2s,
    sample_heun,
    sigma_schedule,
)
from .engine import Trajectory, deterministic_loss, rollout, serve_builtin, step
from .frameio import read_frame, write_frame
from .grid import (
    Channel,
    FieldFrame,
    GridGeometry,
    LatWeights,
    VariableCatalog,
    latitude_weights,
    subgrid_view,
    weighted_area_mean,
)
from .verification import (
    EnsembleForecast,
    LeadTimeReport,
    RegionBox,
    acc,
    crps,
    evaluate_run,
    event_series,
    region_box_mean,
    rmse,
    spread,
    ssr,
)
