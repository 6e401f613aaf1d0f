"""Calibration of pooled multi-study biomarker data.

Thin wrappers over the C++ core. Results are plain dicts mirroring the JSON
written by the ``poolcal`` command-line tool.
"""

import json
import os

from . import _core
from ._core import NumericalError, ParseError, PoolcalError, ValidationError, __version__

__all__ = [
    "fit",
    "calibrate",
    "simulate",
    "generate",
    "presets",
    "PoolcalError",
    "ParseError",
    "ValidationError",
    "NumericalError",
    "__version__",
]


def _dump(config):
    if config is None:
        return ""
    return json.dumps(config)


def fit(path, config=None, *, pseudo_datasets=None, seed=None, variance_rule=None, threads=1):
    """Fit the outcome model on calibrated exposures with resampling SEs.

    ``config`` takes the same keys as the CLI's ``--config`` file; keyword
    arguments override it.
    """
    cfg = dict(config or {})
    if pseudo_datasets is not None:
        cfg["pseudo_datasets"] = pseudo_datasets
    if seed is not None:
        cfg["seed"] = seed
    if variance_rule is not None:
        cfg["variance_rule"] = variance_rule
    return json.loads(_core.fit(os.fspath(path), _dump(cfg), threads))


def calibrate(path, config=None, *, icc_convention=None):
    """Estimate the measurement model and return per-subject calibrated values."""
    return json.loads(_core.calibrate(os.fspath(path), _dump(config), icc_convention or ""))


def simulate(preset=None, *, seed, prevalence=0.10, overrides=None, threads=1):
    """Run the scenarios of ``preset`` (or one base scenario) and return their reports."""
    return [json.loads(r) for r in _core.simulate(preset or "", prevalence, _dump(overrides), seed, threads)]


def generate(path, *, seed, odds_ratio=1.25, overrides=None):
    """Write one simulated pooled dataset (with the true exposure) to ``path``."""
    _core.generate(_dump(overrides), odds_ratio, seed, os.fspath(path))


def presets():
    return list(_core.presets())
