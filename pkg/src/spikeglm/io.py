"""File formats and experiment configuration.

Spike trains and stimuli are plain text with an explicit ``delta=``
header so files are auditable; fit reports and configs are JSON.
Floats are serialized at full precision (shortest round-trip form), so
every format round-trips losslessly.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ._version import __version__
from .design import SpikeTrain, Stimulus
from .errors import DataFormatError
from .likelihood import GlmParams
from .network import NeuronParams, UnfittableNeuron
from .optimize import FitOptions
from .separable import SeparableParams

MODEL_KINDS = ("single", "separable", "network")


# -- spike train and stimulus text formats ---------------------------------

def _parse_header(line, key, path, line_no):
    prefix = key + "="
    if not line.startswith(prefix):
        raise DataFormatError(
            f"{path}:{line_no}: expected header '{key}=<value>', got {line!r}"
        )
    try:
        return float(line[len(prefix):])
    except ValueError as err:
        raise DataFormatError(f"{path}:{line_no}: bad {key} value {line!r}") from err


def save_spike_train(train, path):
    """Write a spike train: ``delta=`` header then one count per line."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"delta={train.delta!r}\n")
        for count in train.counts:
            fh.write(f"{int(count)}\n")


def load_spike_train(path):
    """Read the text format written by :func:`save_spike_train`.

    Errors name the offending line: a missing header, a negative or
    non-integer count, or an empty file.
    """
    with open(path, "r", encoding="ascii") as fh:
        lines = [line.strip() for line in fh]
    lines = [line for line in lines if line]
    if not lines:
        raise DataFormatError(f"{path}: file is empty")
    delta = _parse_header(lines[0], "delta", path, 1)
    counts = []
    for line_no, line in enumerate(lines[1:], start=2):
        try:
            value = int(line)
        except ValueError as err:
            raise DataFormatError(
                f"{path}:{line_no}: expected an integer count, got {line!r}"
            ) from err
        if value < 0:
            raise DataFormatError(f"{path}:{line_no}: negative count {value}")
        counts.append(value)
    if not counts:
        raise DataFormatError(f"{path}: header but no bins")
    return SpikeTrain(np.asarray(counts), delta)


def save_stimulus(stimulus, path):
    """Write a stimulus: ``delta=`` and ``locations=`` headers, one row per bin."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"delta={stimulus.delta!r}\n")
        fh.write(f"locations={stimulus.num_locations}\n")
        for column in stimulus.values.T:
            fh.write(" ".join(repr(float(v)) for v in column) + "\n")


def load_stimulus(path):
    """Read the text format written by :func:`save_stimulus`."""
    with open(path, "r", encoding="ascii") as fh:
        lines = [line.strip() for line in fh]
    lines = [line for line in lines if line]
    if len(lines) < 2:
        raise DataFormatError(f"{path}: expected delta and locations headers")
    delta = _parse_header(lines[0], "delta", path, 1)
    locations = int(_parse_header(lines[1], "locations", path, 2))
    if locations < 1:
        raise DataFormatError(f"{path}:2: locations must be >= 1")
    rows = []
    for line_no, line in enumerate(lines[2:], start=3):
        parts = line.split()
        if len(parts) != locations:
            raise DataFormatError(
                f"{path}:{line_no}: expected {locations} values, got {len(parts)}"
            )
        try:
            rows.append([float(p) for p in parts])
        except ValueError as err:
            raise DataFormatError(f"{path}:{line_no}: bad value in {line!r}") from err
    if not rows:
        raise DataFormatError(f"{path}: headers but no bins")
    return Stimulus(np.asarray(rows).T, delta)


# -- experiment configuration ----------------------------------------------

@dataclass(frozen=True)
class SimulationSettings:
    """How synthetic data is generated for simulate/recover runs."""

    num_bins: int = 30000
    seed: int = 1
    stimulus_kind: str = "gaussian-white-noise"
    num_locations: int = 1
    num_neurons: int = 1


@dataclass(frozen=True)
class IOPaths:
    """Where a run reads and writes its files."""

    stimulus: str = "stimulus.txt"
    spikes: object = "spikes.txt"   # str, or list of str for populations
    report: str = "report.json"


@dataclass(frozen=True)
class ExperimentConfig:
    """Complete description of a simulate/fit/recover run."""

    model: str = "single"
    delta: float = 0.001
    stim_lags: int = 8
    history_lags: int = 4
    fit: FitOptions = field(default_factory=FitOptions)
    simulation: SimulationSettings = field(default_factory=SimulationSettings)
    paths: IOPaths = field(default_factory=IOPaths)
    params: object = None   # optional explicit ground truth (model-specific dict)

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise DataFormatError(
                f"unknown model {self.model!r}; expected one of {MODEL_KINDS}"
            )


_FIT_KEYS = ("max_iters", "grad_tol", "step_tol", "damping")
_SIM_KEYS = ("num_bins", "seed", "stimulus_kind", "num_locations", "num_neurons")
_PATH_KEYS = ("stimulus", "spikes", "report")
_TOP_KEYS = ("model", "delta", "stim_lags", "history_lags", "fit", "simulation",
             "paths", "params")
_PARAM_KEYS = {
    "single": ("stim_filter", "history_filter", "bias"),
    "separable": ("space_filter", "time_filter", "history_filter", "bias"),
    "network": ("neurons",),
    "neuron": ("stim_filter", "couplings", "bias"),
}


def _reject_unknown(mapping, allowed, context):
    for key in mapping:
        if key not in allowed:
            raise DataFormatError(f"unknown config key {context}{key!r}")


def config_from_dict(data):
    """Build an :class:`ExperimentConfig`, rejecting any unknown key by name."""
    if not isinstance(data, dict):
        raise DataFormatError("config document must be a JSON object")
    _reject_unknown(data, _TOP_KEYS, "")
    fit_data = data.get("fit", {})
    _reject_unknown(fit_data, _FIT_KEYS, "fit.")
    sim_data = data.get("simulation", {})
    _reject_unknown(sim_data, _SIM_KEYS, "simulation.")
    path_data = data.get("paths", {})
    _reject_unknown(path_data, _PATH_KEYS, "paths.")
    model = data.get("model", "single")
    params = data.get("params")
    if params is not None:
        _reject_unknown(params, _PARAM_KEYS.get(model, ()), "params.")
        for neuron in params.get("neurons", []) if model == "network" else []:
            _reject_unknown(neuron, _PARAM_KEYS["neuron"], "params.neurons[].")
    return ExperimentConfig(
        model=model,
        delta=data.get("delta", 0.001),
        stim_lags=data.get("stim_lags", 8),
        history_lags=data.get("history_lags", 4),
        fit=FitOptions(**fit_data),
        simulation=SimulationSettings(**sim_data),
        paths=IOPaths(**path_data),
        params=params,
    )


def config_to_dict(config):
    """Inverse of :func:`config_from_dict`; round-trips to an equal config."""
    out = {
        "model": config.model,
        "delta": config.delta,
        "stim_lags": config.stim_lags,
        "history_lags": config.history_lags,
        "fit": asdict(config.fit),
        "simulation": asdict(config.simulation),
        "paths": asdict(config.paths),
    }
    if config.params is not None:
        out["params"] = config.params
    return out


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as err:
        raise DataFormatError(f"{path}: invalid JSON ({err})") from err
    return config_from_dict(data)


def save_config(config, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(config), fh, indent=2)
        fh.write("\n")


# -- fit reports -------------------------------------------------------------

def params_to_dict(params):
    """JSON-ready mapping for any of the three parameter kinds."""
    if isinstance(params, SeparableParams):
        return {
            "space_filter": params.space_filter.tolist(),
            "time_filter": params.time_filter.tolist(),
            "history_filter": params.history_filter.tolist(),
            "bias": params.bias,
        }
    if isinstance(params, NeuronParams):
        return {
            "stim_filter": params.stim_filter.tolist(),
            "couplings": [c.tolist() for c in params.couplings],
            "bias": params.bias,
        }
    if isinstance(params, GlmParams):
        return {
            "stim_filter": params.stim_filter.tolist(),
            "history_filter": params.history_filter.tolist(),
            "bias": params.bias,
        }
    raise TypeError(f"cannot serialize parameters of type {type(params).__name__}")


def params_from_dict(data):
    """Rebuild parameters from :func:`params_to_dict` output."""
    if "space_filter" in data:
        return SeparableParams(
            np.asarray(data["space_filter"]), np.asarray(data["time_filter"]),
            np.asarray(data["history_filter"]), data["bias"],
        )
    if "couplings" in data:
        return NeuronParams(
            np.asarray(data["stim_filter"]),
            tuple(np.asarray(c) for c in data["couplings"]),
            data["bias"],
        )
    return GlmParams(
        np.asarray(data["stim_filter"]), np.asarray(data["history_filter"]),
        data["bias"],
    )


def _result_to_dict(result):
    if isinstance(result, UnfittableNeuron):
        return {"unfittable": True, "neuron": result.neuron, "reason": result.reason}
    return {
        "params": params_to_dict(result.params),
        "final_loglik": result.final_loglik,
        "iterations": result.iterations,
        "converged": result.converged,
        "trace": [[point.loglik, point.grad_max_norm] for point in result.trace],
        "warnings": list(result.warnings),
    }


def save_fit_report(result, path, model="single", config=None):
    """Write a structured JSON report for one fit (or one fit per neuron).

    The document carries the model kind, full-precision parameters, the
    final log-likelihood, the per-iteration trace, the convergence flag,
    any warnings, an echo of the config, and the tool version. Reports
    are written for non-converged fits too; the flag says so.
    """
    if isinstance(result, (list, tuple)):
        fitted = [r for r in result if not isinstance(r, UnfittableNeuron)]
        doc = {
            "neurons": [_result_to_dict(r) for r in result],
            "converged": bool(fitted) and all(r.converged for r in fitted),
            "final_loglik": sum(r.final_loglik for r in fitted),
        }
    else:
        doc = _result_to_dict(result)
    doc["model"] = model
    doc["tool"] = "spikeglm"
    doc["version"] = __version__
    doc["config"] = config_to_dict(config) if config is not None else None
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_fit_report(path):
    """Parse a report back into a plain dict; floats are exact."""
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
