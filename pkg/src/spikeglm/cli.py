"""Command-line workflows: simulate, fit, check-grad, recover.

Exit status: 0 success, 1 usage error, 2 data error, 3 non-convergence
(or a failed numerical check). Output for a fixed seed and config is
byte-identical across runs.
"""

import argparse
import math
import os
import sys
from dataclasses import replace

import numpy as np

from ._version import __version__
from .design import LagConfig, assemble_design
from .derivatives import check_gradient_fd
from .errors import SpikeGlmError
from .io import (
    ExperimentConfig,
    load_config,
    load_spike_train,
    load_stimulus,
    params_from_dict,
    save_fit_report,
    save_spike_train,
    save_stimulus,
)
from .likelihood import GlmParams
from .network import (
    NeuronParams,
    PopulationData,
    UnfittableNeuron,
    _flat_params,
    _neuron_design,
    fit_population,
)
from .optimize import fit
from .separable import (
    SeparableParams,
    fit_separable,
    separable_gradients,
    separable_log_likelihood,
)
from .simulate import SimConfig, generate_stimulus, simulate_population, \
    simulate_spike_train

USAGE_ERROR = 1
DATA_ERROR = 2
NOT_CONVERGED = 3
GRAD_CHECK_TOL = 1e-5
RECOVER_CORRELATION_FLOOR = 0.7
RECOVER_FROBENIUS_CEIL = 0.2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


# -- canonical ground-truth models -------------------------------------------

def _bump(length, center_frac, width_frac):
    idx = np.arange(length, dtype=float)
    center = center_frac * max(length - 1, 1)
    width = max(width_frac * length, 0.75)
    return np.exp(-0.5 * ((idx - center) / width) ** 2)


def _stim_filter_shape(lags):
    # biphasic profile peaking near the most recent lags
    shape = _bump(lags, 0.75, 0.12) - 0.55 * _bump(lags, 0.45, 0.16)
    return 0.9 * shape / np.linalg.norm(shape)


def _refractory_filter(lags, strength=2.5):
    age = np.arange(lags - 1, -1, -1, dtype=float)  # most recent lag last
    return -strength * np.exp(-age / 2.0)


def default_ground_truth(config):
    """Deterministic true parameters used when the config supplies none."""
    lags, hist = config.stim_lags, config.history_lags
    if config.model == "single":
        stim = _stim_filter_shape(lags)
        rate = 15.0
        bias = math.log(rate) - 0.5 * float(stim @ stim)
        return GlmParams(stim, _refractory_filter(hist), bias)
    if config.model == "separable":
        locs = config.simulation.num_locations
        space = _bump(locs, 0.5, 0.25)
        space = space / np.linalg.norm(space)
        time = _stim_filter_shape(lags)
        rate = 25.0
        bias = math.log(rate) - 0.5 * float(space @ space) * float(time @ time)
        return SeparableParams(space, time, _refractory_filter(hist), bias)
    neurons = config.simulation.num_neurons
    truth = []
    for i in range(neurons):
        stim = 0.8 * np.roll(_stim_filter_shape(lags), i % max(lags, 1))
        couplings = [np.zeros(hist) for _ in range(neurons)]
        couplings[i] = _refractory_filter(hist)
        rate = 15.0
        bias = math.log(rate) - 0.5 * float(stim @ stim)
        truth.append(NeuronParams(stim, tuple(couplings), bias))
    return truth


def _resolve_truth(config):
    if config.params is None:
        return default_ground_truth(config)
    if config.model == "network":
        return [params_from_dict(entry) for entry in config.params["neurons"]]
    return params_from_dict(config.params)


# -- shared plumbing ----------------------------------------------------------

def _sim_config(config):
    return SimConfig(
        num_bins=config.simulation.num_bins,
        delta=config.delta,
        seed=config.simulation.seed,
        stimulus_kind=config.simulation.stimulus_kind,
    )


def _spike_paths(config):
    spikes = config.paths.spikes
    if isinstance(spikes, str):
        if config.model == "network":
            root, ext = os.path.splitext(spikes)
            return [f"{root}-{i}{ext}" for i in range(config.simulation.num_neurons)]
        return [spikes]
    return list(spikes)


def _apply_out_dir(config, out_dir):
    os.makedirs(out_dir, exist_ok=True)

    def move(path):
        return os.path.join(out_dir, os.path.basename(path))

    spikes = config.paths.spikes
    spikes = move(spikes) if isinstance(spikes, str) else [move(p) for p in spikes]
    return replace(config, paths=replace(
        config.paths,
        stimulus=move(config.paths.stimulus),
        spikes=spikes,
        report=move(config.paths.report),
    ))


def _simulate_data(config, truth):
    sim = _sim_config(config)
    locations = (config.simulation.num_locations
                 if config.model == "separable" else 1)
    if config.simulation.stimulus_kind == "custom":
        stimulus = load_stimulus(config.paths.stimulus)
        if stimulus.num_bins != sim.num_bins or stimulus.delta != sim.delta:
            raise SpikeGlmError("custom stimulus does not match the config grid")
    else:
        stimulus = generate_stimulus(sim, locations)
    if config.model == "network":
        return stimulus, simulate_population(truth, stimulus, sim)
    flat = truth.as_full() if isinstance(truth, SeparableParams) else truth
    return stimulus, simulate_spike_train(flat, stimulus, sim)


def _pearson(a, b):
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    a = a - a.mean()
    b = b - b.mean()
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0:
        return 0.0
    return float(a @ b / denom)


# -- subcommands --------------------------------------------------------------

def _cmd_simulate(config):
    truth = _resolve_truth(config)
    stimulus, data = _simulate_data(config, truth)
    if config.simulation.stimulus_kind != "custom":
        save_stimulus(stimulus, config.paths.stimulus)
        print(f"wrote stimulus: {config.paths.stimulus}")
    spike_paths = _spike_paths(config)
    trains = data.trains if isinstance(data, PopulationData) else [data]
    if len(spike_paths) != len(trains):
        raise SpikeGlmError(
            f"{len(spike_paths)} spike paths for {len(trains)} spike trains"
        )
    for train, path in zip(trains, spike_paths):
        save_spike_train(train, path)
        print(f"wrote spikes: {path} ({train.total_spikes} spikes "
              f"in {train.num_bins} bins)")
    return 0


def _load_fit_inputs(config):
    stimulus = load_stimulus(config.paths.stimulus)
    cfg = LagConfig(config.stim_lags, config.history_lags)
    if config.model == "network":
        trains = [load_spike_train(p) for p in _spike_paths(config)]
        return PopulationData(stimulus, tuple(trains)), cfg
    spikes = load_spike_train(_spike_paths(config)[0])
    return assemble_design(stimulus, spikes, cfg), cfg


def _cmd_fit(config):
    loaded, _cfg = _load_fit_inputs(config)
    if config.model == "single":
        result = fit(loaded, config.delta, config.fit)
        ok = result.converged
        summary = result
    elif config.model == "separable":
        result = fit_separable(loaded, config.delta, config.fit)
        ok = result.converged
        summary = result
    else:
        result = fit_population(loaded, _cfg, config.fit)
        fitted = [r for r in result if not isinstance(r, UnfittableNeuron)]
        ok = bool(fitted) and len(fitted) == len(result) \
            and all(r.converged for r in fitted)
        summary = None
    save_fit_report(result, config.paths.report, config.model, config)
    if summary is not None:
        print(f"converged: {summary.converged}")
        print(f"final log-likelihood: {summary.final_loglik!r}")
        print(f"iterations: {summary.iterations}")
    else:
        for i, r in enumerate(result):
            if isinstance(r, UnfittableNeuron):
                print(f"neuron {i}: unfittable ({r.reason})")
            else:
                print(f"neuron {i}: converged={r.converged} "
                      f"loglik={r.final_loglik!r}")
    print(f"wrote report: {config.paths.report}")
    return 0 if ok else NOT_CONVERGED


def _fd_gradient(fun, theta, step=1e-5):
    numeric = np.empty_like(theta)
    for j in range(theta.size):
        bumped = theta.copy()
        bumped[j] = theta[j] + step
        plus = fun(bumped)
        bumped[j] = theta[j] - step
        minus = fun(bumped)
        numeric[j] = (plus - minus) / (2 * step)
    return numeric


def _cmd_check_grad(config):
    truth = _resolve_truth(config)
    stimulus, data = _simulate_data(config, truth)
    cfg = LagConfig(config.stim_lags, config.history_lags)
    if config.model == "network":
        design = _neuron_design(data, cfg, 0)
        report = check_gradient_fd(_flat_params(truth[0]), design, config.delta)
        max_err = report.max_rel_error
    elif config.model == "separable":
        design = assemble_design(stimulus, data, cfg)
        sizes = (truth.space_filter.size, truth.time_filter.size,
                 truth.history_filter.size)

        def unpack(vec):
            a, b, c = sizes
            return SeparableParams(vec[:a], vec[a:a + b], vec[a + b:a + b + c],
                                   vec[-1])

        theta = np.concatenate([truth.space_filter, truth.time_filter,
                                truth.history_filter, [truth.bias]])
        numeric = _fd_gradient(
            lambda v: separable_log_likelihood(unpack(v), design, config.delta),
            theta,
        )
        analytic = separable_gradients(truth, design, config.delta).to_vector()
        floor = 1e-8 * max(1.0, float(np.abs(numeric).max()))
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        max_err = float((np.abs(analytic - numeric) / denom).max())
    else:
        design = assemble_design(stimulus, data, cfg)
        report = check_gradient_fd(truth, design, config.delta)
        max_err = report.max_rel_error
    print(f"max relative error: {max_err:.3e}")
    if max_err > GRAD_CHECK_TOL:
        print(f"FAIL: exceeds tolerance {GRAD_CHECK_TOL:g}")
        return NOT_CONVERGED
    return 0


def _cmd_recover(config):
    truth = _resolve_truth(config)
    stimulus, data = _simulate_data(config, truth)
    cfg = LagConfig(config.stim_lags, config.history_lags)
    if config.model == "single":
        design = assemble_design(stimulus, data, cfg)
        result = fit(design, config.delta, config.fit)
        corr = _pearson(
            np.concatenate([truth.stim_filter, truth.history_filter]),
            np.concatenate([result.params.stim_filter,
                            result.params.history_filter]),
        )
        print(f"converged: {result.converged}")
        print(f"filter correlation: {corr:.6f}")
        ok = result.converged and corr > RECOVER_CORRELATION_FLOOR
    elif config.model == "separable":
        design = assemble_design(stimulus, data, cfg)
        result = fit_separable(design, config.delta, config.fit)
        true_matrix = truth.filter_matrix
        fitted_matrix = result.params.filter_matrix
        rel = float(np.linalg.norm(fitted_matrix - true_matrix)
                    / np.linalg.norm(true_matrix))
        print(f"converged: {result.converged}")
        print(f"filter matrix relative error: {rel:.6f}")
        ok = rel < RECOVER_FROBENIUS_CEIL
    else:
        results = fit_population(data, cfg, config.fit)
        corrs = []
        for i, r in enumerate(results):
            if isinstance(r, UnfittableNeuron):
                print(f"neuron {i}: unfittable ({r.reason})")
                continue
            corr = _pearson(
                np.concatenate([truth[i].stim_filter,
                                truth[i].flat_history_filter()]),
                np.concatenate([r.params.stim_filter,
                                r.params.flat_history_filter()]),
            )
            corrs.append(corr)
            print(f"neuron {i}: filter correlation: {corr:.6f}")
        mean_corr = sum(corrs) / len(corrs) if corrs else 0.0
        print(f"mean filter correlation: {mean_corr:.6f}")
        ok = len(corrs) == len(results) and mean_corr > RECOVER_CORRELATION_FLOOR
    return 0 if ok else NOT_CONVERGED


# -- entry point ---------------------------------------------------------------

def build_parser():
    parser = _Parser(
        prog="spikeglm",
        description="Fit spiking-neuron models by maximum likelihood.",
    )
    parser.add_argument("--version", action="version",
                        version=f"spikeglm {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name, help_text in (
        ("simulate", "generate stimulus and spike files from a ground-truth model"),
        ("fit", "fit a model to files and write a JSON report"),
        ("check-grad", "verify analytic gradients against finite differences"),
        ("recover", "simulate from ground truth, fit, and report recovery"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", help="JSON experiment config")
        cmd.add_argument("--seed", type=int, help="override the simulation seed")
        cmd.add_argument("--out", help="directory for output files")
        cmd.add_argument("--model", choices=("single", "separable", "network"),
                         help="override the model kind")
    return parser


_HANDLERS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "check-grad": _cmd_check_grad,
    "recover": _cmd_recover,
}


def _resolve_config(args):
    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.model:
        config = replace(config, model=args.model, params=None
                         if config.model != args.model else config.params)
    if config.model == "separable" and config.simulation.num_locations == 1:
        config = replace(config,
                         simulation=replace(config.simulation, num_locations=4))
    if config.model == "network" and config.simulation.num_neurons == 1:
        config = replace(config,
                         simulation=replace(config.simulation, num_neurons=3))
    if args.seed is not None:
        config = replace(config, simulation=replace(config.simulation,
                                                    seed=args.seed))
    if args.out:
        config = _apply_out_dir(config, args.out)
    return config


def run_command(argv):
    """Run one CLI invocation and return its exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return USAGE_ERROR
    except SystemExit as exit_:
        # --help / --version paths
        return int(exit_.code or 0)
    if not args.command:
        parser.print_usage(sys.stderr)
        return USAGE_ERROR
    try:
        config = _resolve_config(args)
        return _HANDLERS[args.command](config)
    except (SpikeGlmError, FileNotFoundError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return DATA_ERROR


def main():
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
