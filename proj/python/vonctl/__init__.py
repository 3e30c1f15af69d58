"""Latent dynamics models of a soft arm and open-loop control through them."""

import json

from . import _core
from ._core import (
    CONTROL_DT,
    DATASET_PRESSURE_MAX,
    Checkpoint,
    Dataset,
    DivergenceError,
    FormatError,
    PlantParams,
    PlantState,
    Server,
    SimSession,
    TrainingDivergence,
    VersionMismatch,
    execute_open_loop,
    generate_dataset,
    generate_linear_latent_dataset,
    load_checkpoint,
    load_dataset,
    plant_step,
    render,
    rest_pressure,
    run_suite,
    save_checkpoint,
    save_dataset,
    schedule_waypoints,
    stress_ramp,
    stress_release,
    stress_static_hold,
    suite_info,
    suite_names,
)

__version__ = "0.1.0"


def _text(doc):
    return doc if isinstance(doc, str) else json.dumps(doc)


def default_config(family="oscillator", decoder="keypoint"):
    """Default training config as a dict."""
    return json.loads(_core.default_config(family, decoder))


def normalize_config(config):
    """Fills missing keys with defaults and validates."""
    return json.loads(_core.normalize_config(_text(config)))


def ablation_configs(base):
    return [json.loads(c) for c in _core.ablation_configs(_text(base))]


def train(config, train_set, validation_set, progress=None):
    """Trains a model; `progress(epoch, horizon, loss)` is called after every epoch."""
    return _core.train(_text(config), train_set, validation_set, progress)


def optimize(checkpoint, waypoints, weights_from="Setp. Normal", horizon=0, iterations=500,
             p_max=DATASET_PRESSURE_MAX, seed=0):
    """Solves for pressures that reach the waypoints; returns the solution document."""
    return json.loads(_core.optimize_waypoints(checkpoint, _text(waypoints), weights_from, horizon,
                                               iterations, p_max, seed))


def execute(solution, params=None):
    """Runs a solution open loop on the plant and returns the recording."""
    return _core.execute_solution(_text(solution), params or PlantParams())


def score(solution, recording):
    return _core.score_solution(_text(solution), recording)
