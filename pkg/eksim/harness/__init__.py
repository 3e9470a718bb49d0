from .util import (
    RateFit,
    RateResult,
    RateRow,
    RunManifest,
    RunningMoments,
    fit_log_rate,
    merge_all,
    write_rate_csv,
    write_rows_csv,
)
from .harness import (
    Observable,
    RateExperimentConfig,
    Z_LAWS,
    abs_normal,
    build_meanfield_path,
    calibrate_radius,
    covariance_mc_rate,
    dt_sensitivity,
    estimate_chaos_error,
    excursion_decay_experiment,
    excursion_probability,
    excursion_probability_from_config,
    excursion_probability_rate,
    exponential,
    meanfield_moment_profile,
    pilot_meanfield_moment,
    run_rate_chaos,
    sampling_error_rate,
)
from .suites import (
    SuiteReport,
    class_check_suite,
    convexity_suite,
    psd_property_suite,
    stability_property_suite,
)
