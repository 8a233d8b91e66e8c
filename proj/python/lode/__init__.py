"""Latent ODE trajectory engine.

Series and collections are plain dicts in the same JSON layout the CLI reads
and writes. Results come back as dicts.
"""

import json

from . import _lode
from ._lode import (
    EmptyWindowError,
    EnsembleDegenerateError,
    LodeError,
    Model,
    QueryInfeasibleError,
    ValidationError,
    decode,
    dopri5,
    evolve,
    file_sha256,
    reconstruct_past,
)

__version__ = _lode.__version__

__all__ = [
    "EmptyWindowError",
    "EnsembleDegenerateError",
    "LodeError",
    "Model",
    "QueryInfeasibleError",
    "ValidationError",
    "condition_on_point",
    "decode",
    "dopri5",
    "encode",
    "evaluate",
    "evolve",
    "file_sha256",
    "gen_icu",
    "gen_spirals",
    "ingest_csv",
    "reconstruct_past",
    "risk_curve",
    "sample_ensemble",
    "train",
]


def _text(doc):
    return doc if isinstance(doc, str) else json.dumps(doc)


def gen_spirals(n_series=100, points_per_series=30, noise_std=0.03, clockwise_ratio=0.5, seed=0,
                normalize=True):
    """Spiral collection, normalized with statistics fitted to it unless normalize=False."""
    return json.loads(_lode.gen_spirals(n_series, points_per_series, noise_std, clockwise_ratio, seed,
                                        normalize))


def gen_icu(n_patients=1000, death_ratio=0.25, separation=2.5, seed=0, normalize=True):
    """Synthetic ICU collection with outcome labels."""
    return json.loads(_lode.gen_icu(n_patients, death_ratio, separation, seed, normalize))


def ingest_csv(text, window=1.0):
    return json.loads(_lode.ingest_csv(text, window))


def encode(model, series, fraction=1.0):
    """Posterior (mean, std) of the initial latent state."""
    return _lode.encode(model, _text(series), fraction)


def train(dataset, **config):
    """Trains on a normalized collection. Returns (model, report rows)."""
    model, report = _lode.train(_text(dataset), json.dumps(config))
    return model, [json.loads(line) for line in report.splitlines() if line]


def evaluate(model, dataset, fractions=None):
    return json.loads(_lode.evaluate(model, _text(dataset), fractions or []))


def sample_ensemble(model, series, fraction=1.0, K=30, horizon_mult=1.5, seed=0, units="normalized"):
    return json.loads(_lode.sample_ensemble(model, _text(series), fraction, K, horizon_mult, seed, units))


def condition_on_point(model, series, time, feature, value, tolerance, fraction=1.0, K=30, M=0,
                       horizon_mult=1.5, seed=0, units="normalized"):
    """Ensemble conditioned on the trajectory passing near (time, feature, value).

    M = 0 draws the default number of proposals.
    """
    return json.loads(_lode.condition_on_point(model, _text(series), time, feature, value, tolerance,
                                               fraction, K, M, horizon_mult, seed, units))


def risk_curve(model, series, fractions=(0.2, 0.4, 0.6, 0.8, 1.0), threshold=0.5):
    """Returns ([(duration, probability), ...], crossing or None)."""
    return _lode.risk_curve(model, _text(series), list(fractions), threshold)
