import logging
import os
import sys

import click
from tabulate import tabulate

from eksim import config, harness
from eksim.config import Experiment, Key
from eksim.dynamics import (TrajectoryDump, gaussian_meanfield_path,
                            picard_covariance_path, uniform_grid)
from eksim.exceptions import (ConfigReadException, ConfigValidationException,
                              ConfigWriteException, EksimException,
                              InvalidPotential, NoConvergence,
                              UnsupportedObservable)
from eksim.potentials import Kind, potential_from_config


CONTEXT_SETTINGS = dict(help_option_names=["-h", "--help"])
EXPERIMENT_SETTINGS = dict(CONTEXT_SETTINGS, ignore_unknown_options=True,
                           allow_extra_args=True)

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_CONFIG = 2
EXIT_STATISTICAL = 3


@click.group(context_settings=CONTEXT_SETTINGS)
@click.option("--debug", is_flag=True, help="Increase verbosity.")
@click.version_option(version=config.version, prog_name=config.app_name)
def main(debug):
    """
    Propagation-of-chaos experiments for the ensemble Kalman sampler.

    Each experiment reads a flat JSON config. Any config key can be
    overridden on the command line with --key=value, e.g. --sde.dt=0.0005.
    Results go to a CSV in --out-dir together with a JSON manifest that
    reproduces the run when passed back as --config.


    EXAMPLES:

    \b
    $ eksim rate-chaos --config configs/rate_chaos_quadratic.json
    $ eksim cov-rate --config configs/cov_rate.json --replicates=200
    $ eksim suite stability
    """

    console_handler = logging.StreamHandler()
    if config.EKSIM_ENV == "development":
        logLevel = logging.DEBUG
        log_formatter = logging.Formatter(
            "%(levelname)s-%(name)s: %(message)s")
    else:
        log_formatter = logging.Formatter("%(message)s")
        if debug:
            logLevel = logging.DEBUG
        else:
            console_handler.addFilter(logging.Filter("root"))
            logLevel = logging.INFO

    console_handler.setFormatter(log_formatter)
    logger = logging.getLogger()
    logger.handlers.clear()
    logger.addHandler(console_handler)
    logger.setLevel(logLevel)


def experiment_options(fn):
    options = [
        click.option("-c", "--config", "config_path", required=True,
                     metavar="<file>",
                     help="Experiment config (JSON) or a run manifest."),
        click.option("--seed", type=int, default=None,
                     help="Override the master seed."),
        click.option("--threads", type=click.IntRange(min=1), default=None,
                     help="Worker cap. Defaults to the CPU count."),
        click.option("-o", "--out-dir", default="eksim-out",
                     show_default=True, help="Directory for CSV output."),
        click.argument("overrides", nargs=-1, type=click.UNPROCESSED),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


# Experiments ###########################################################


@main.command(name="rate-chaos", context_settings=EXPERIMENT_SETTINGS)
@experiment_options
@click.option("--dump-trajectories", is_flag=True,
              help="Write every coupled trajectory to CSV (slow).")
@click.option("--dt-check", is_flag=True,
              help="Rerun with dt / 2 and report both slopes.")
def rate_chaos(config_path, seed, threads, out_dir, overrides,
               dump_trajectories, dt_check):
    """
    Fit the rate of E[sup_t |X^j_t - Xbar^j_t|^p] in J.

    Runs the interacting ensemble against its synchronously coupled
    mean-field ensemble for every J in j_values. With error_mode=pointwise
    the supremum is taken after the expectation instead.
    """

    def body(cfg):
        rc = harness.RateExperimentConfig.from_config(cfg)
        if dt_check:
            return list(harness.dt_sensitivity(
                rc, threads=threads, show_progress=_show_progress()))

        dump = None
        if dump_trajectories:
            dump = TrajectoryDump(os.path.join(out_dir, "trajectories"))
        return [harness.run_rate_chaos(rc, threads=threads, dump=dump,
                                       show_progress=_show_progress())]

    _run_rates(Experiment.rate_chaos, config_path, seed, overrides, out_dir,
               body)


@main.command(name="cov-rate", context_settings=EXPERIMENT_SETTINGS)
@experiment_options
def cov_rate(config_path, seed, threads, out_dir, overrides):
    """
    Fit the Monte-Carlo rate of the empirical covariance of rho0.

    variant=cov measures |C(mu^J) - C(rho0)|_F^p, variant=sqrt the same
    for the matrix square roots.
    """

    def body(cfg):
        return [harness.covariance_mc_rate(
            cfg[Key.rho0_mean.value], cfg[Key.rho0_cov.value],
            cfg[Key.p.value], cfg[Key.j_values.value],
            cfg[Key.replicates.value], cfg[Key.seed.value],
            variant=cfg[Key.variant.value], threads=threads)]

    _run_rates(Experiment.cov_rate, config_path, seed, overrides, out_dir,
               body)


@main.command(context_settings=EXPERIMENT_SETTINGS)
@experiment_options
def excursion(config_path, seed, threads, out_dir, overrides):
    """
    Frequency of large excursions per J.

    excursion.mode=stopping (default) counts replicates in which
    W_r(mu, delta_0) of either ensemble reaches excursion.R before
    sde.t_final; without excursion.R the radius is calibrated from a pilot
    mean-field run. excursion.mode=lemma estimates P(mean of J draws of Z
    >= R) for the Z law named by excursion.z_law.
    """

    def body(cfg):
        if cfg.get(Key.excursion_mode.value) == "lemma":
            return [harness.excursion_probability_from_config(cfg)]
        rc = harness.RateExperimentConfig.from_config(cfg)
        return list(harness.excursion_decay_experiment(
            rc, cfg[Key.excursion_r.value],
            R=cfg.get(Key.excursion_R.value),
            factor=cfg[Key.excursion_factor.value],
            margin=cfg[Key.excursion_margin.value],
            pilot_samples=cfg.get(Key.excursion_samples.value, 10000),
            threads=threads, show_progress=_show_progress()))

    _run_rates(Experiment.excursion, config_path, seed, overrides, out_dir,
               body)


@main.command(name="sampling-error", context_settings=EXPERIMENT_SETTINGS)
@experiment_options
def sampling_error(config_path, seed, threads, out_dir, overrides):
    """
    Fit the rate of the L^p sampling error of (1/J) sum f(X^j_t).

    Only quadratic potentials are supported, the reference expectation
    coming from the closed-form mean-field moments.
    """

    def body(cfg):
        rc = harness.RateExperimentConfig.from_config(cfg)
        observable = harness.Observable.from_config(cfg, rc.dim)
        return [harness.sampling_error_rate(
            rc.pot, observable, cfg[Key.t.value], rc.p, rc.j_values,
            rc.replicates, rc.sde, rc.rho0_mean, rc.rho0_cov,
            threads=threads)]

    _run_rates(Experiment.sampling_error, config_path, seed, overrides,
               out_dir, body)


@main.command(context_settings=EXPERIMENT_SETTINGS)
@experiment_options
def moments(config_path, seed, threads, out_dir, overrides):
    """
    Mean-field sup-moments E[sup_t |Xbar_t|^p] per J.

    The fitted slope should be close to 0.
    """

    def body(cfg):
        rc = harness.RateExperimentConfig.from_config(cfg)
        return [harness.meanfield_moment_profile(
            rc, rc.p, threads=threads, show_progress=_show_progress())]

    _run_rates(Experiment.moments, config_path, seed, overrides, out_dir,
               body)


@main.command(name="picard-path", context_settings=EXPERIMENT_SETTINGS)
@experiment_options
def picard_path(config_path, seed, threads, out_dir, overrides):
    """
    Solve for the mean-field mean/covariance path by Picard iteration.

    For quadratic potentials the closed-form path is written alongside
    with the Frobenius gap at every node.
    """
    ctx = click.get_current_context()
    name = Experiment.picard_path.name
    try:
        cfg = _load(config_path, seed, overrides, Experiment.picard_path)
        manifest = harness.RunManifest(name, cfg)
        rc = harness.RateExperimentConfig.from_config(cfg)
        grid = uniform_grid(rc.sde.t_final, rc.sde.dt)

        exit_code = EXIT_OK
        try:
            result = picard_covariance_path(
                rc.pot, rc.initial_sampler(), grid,
                n_particles=rc.picard_n_particles,
                max_iter=rc.picard_max_iter, tol=rc.picard_tol,
                seed=rc.sde.seed, cov_floor=rc.sde.cov_floor,
                fresh_noise=rc.picard_fresh_noise)
        except NoConvergence as e:
            logging.error(e.message)
            result = e.result
            exit_code = EXIT_STATISTICAL

        rows = list(result.path.rows())
        if rc.pot.kind == Kind.quadratic:
            exact = gaussian_meanfield_path(rc.pot.precision, rc.pot.center,
                                            rc.rho0_mean, rc.rho0_cov, grid)
            for i, row in enumerate(rows):
                row["closed_form_gap"] = float(
                    ((result.path.mats[i] - exact.mats[i]) ** 2).sum() ** 0.5)

        csv_path = os.path.join(out_dir, f"{name}.csv")
        harness.write_rows_csv(csv_path, rows)
        manifest.add_output(csv_path)

        click.echo(tabulate(
            [{"iteration": k + 1, "gap": gap}
             for k, gap in enumerate(result.gaps)], headers="keys"))
        if "closed_form_gap" in rows[0]:
            click.echo(f"max closed-form gap: "
                       f"{max(r['closed_form_gap'] for r in rows):.4e}")

        manifest.finish(**result.describe())
        manifest.write(os.path.join(out_dir, f"{name}_manifest.json"))
    except EksimException as e:
        logging.error(e.message)
        ctx.exit(exit_code_for(e))

    ctx.exit(exit_code)


# Suites ################################################################


SUITES = ("stability", "psd", "convexity", "class_check")


@main.command(context_settings=CONTEXT_SETTINGS)
@click.argument("which", type=click.Choice(SUITES))
@click.option("-n", "--trials", type=click.IntRange(min=1), default=None,
              help="Number of random instances.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("-c", "--config", "config_path", default=None, metavar="<file>",
              help="Check the potential of this config instead of the "
                   "built-in ones (convexity and class_check).")
@click.option("-o", "--out-dir", default="eksim-out", show_default=True,
              help="Directory for violation reports.")
def suite(which, trials, seed, config_path, out_dir):
    """
    Run a randomized property suite.

    \b
    stability    -   Wasserstein stability of covariances and their roots.
    psd          -   PSD square root algebra and its inequalities.
    convexity    -   Convexity and gradient growth of the potentials.
    class_check  -   Growth class of the potentials.

    Exits with 1 if any inequality is violated; violating instances are
    written to <out-dir>/suite_<which>_violations.json for replay.
    """
    ctx = click.get_current_context()
    try:
        potentials = None
        if config_path:
            cfg = config.read_config(config_path)
            potentials = [potential_from_config(
                cfg, config.require_int(cfg, Key.dim, low=1))]

        if which == "stability":
            report = harness.stability_property_suite(
                **_trials(trials, "n_trials"), seed=seed)
        elif which == "psd":
            report = harness.psd_property_suite(
                **_trials(trials, "n_trials"), seed=seed)
        elif which == "convexity":
            report = harness.convexity_suite(
                potentials, **_trials(trials, "n_pairs"), seed=seed)
        else:
            report = harness.class_check_suite(
                potentials, **_trials(trials, "n_samples"), seed=seed)

        click.echo(tabulate(report.rows(), headers="keys"))
        if report.details:
            click.echo()
            click.echo(tabulate(
                [dict(potential=k, **{n: v for n, v in d.items()
                                      if n != "ratios"})
                 for k, d in report.details.items()], headers="keys"))

        if not report.passed:
            path = os.path.join(out_dir, f"suite_{which}_violations.json")
            config.write_json_atomic(path, report.as_dict())
            logging.error(f"{len(report.violations)} violations, "
                          f"written to {path}")
            ctx.exit(EXIT_VIOLATION)
    except EksimException as e:
        logging.error(e.message)
        ctx.exit(exit_code_for(e))


# CLI Utilities ########################################################

def exit_code_for(e: EksimException) -> int:
    """EXIT_VIOLATION is reserved for failed suites; every library error
    outside the config family is a numerical or statistical failure."""
    if isinstance(e, (ConfigReadException, ConfigValidationException,
                      ConfigWriteException, InvalidPotential,
                      UnsupportedObservable)):
        return EXIT_CONFIG
    return EXIT_STATISTICAL


def _load(config_path, seed, overrides, experiment: Experiment):
    cfg = config.apply_overrides(config.read_config(config_path), overrides)
    if seed is not None:
        cfg[Key.seed.value] = seed
    return config.validate(cfg, experiment)


def _run_rates(experiment: Experiment, config_path, seed, overrides,
               out_dir, body):
    ctx = click.get_current_context()
    name = experiment.name
    try:
        cfg = _load(config_path, seed, overrides, experiment)
        manifest = harness.RunManifest(name, cfg)
        results = body(cfg)

        csv_path = os.path.join(out_dir, f"{name}.csv")
        harness.write_rate_csv(csv_path, results)
        manifest.add_output(csv_path)

        for result in results:
            click.echo(tabulate(result.table(), headers="keys",
                                floatfmt=".6g"))
            click.echo(result.summary_line())
            click.echo()

        info = {}
        for result in results:
            info.update(result.info)
            if result.fit is not None:
                info[f"{result.experiment}_fit"] = result.fit.describe()
        manifest.finish(
            failures={r.experiment: r.n_failed for r in results}, **info)
        manifest.write(os.path.join(out_dir, f"{name}_manifest.json"))
    except EksimException as e:
        logging.error(e.message)
        ctx.exit(exit_code_for(e))


def _trials(value, name):
    return {name: value} if value is not None else {}


def _show_progress() -> bool:
    return sys.stderr.isatty()


if __name__ == "__main__":
    main()  # pylint: disable=no-value-for-parameter
