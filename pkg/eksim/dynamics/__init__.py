from .noise import CoarsenedNoise, NoiseStream, Purpose
from .paths import (
    CovariancePath,
    PicardResult,
    gaussian_meanfield_path,
    match_moments,
    picard_covariance_path,
    uniform_grid,
)
from .dynamics import (
    CoupledEnsembles,
    EnsembleState,
    GaussianSampler,
    MonitorKind,
    ReplicateRecorder,
    SdeConfig,
    StoppingMonitor,
    StoppingRecord,
    TrajectoryDump,
    TrajectorySummary,
    diffusion,
    drift,
    run_coupled_trajectory,
    run_ips,
    step_coupled,
    step_ips,
    step_meanfield,
    stopping_monitor,
)
