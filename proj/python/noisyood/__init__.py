"""Post-hoc OOD detection benchmark under label noise."""

import json
import os

from . import _core
from ._core import (
    ConfigError,
    Error,
    FeatureSet,
    IoError,
    MissingInputError,
    NumericError,
    ValidationError,
    aso,
    auroc,
    auroc_triple,
    benchmark_methods,
    estimate_transition,
    inject_class_conditional,
    inject_uniform,
    known_methods,
    median,
    spearman,
    trace_model,
)

__all__ = [
    "ConfigError",
    "Detector",
    "Error",
    "FeatureSet",
    "IoError",
    "MissingInputError",
    "NumericError",
    "ValidationError",
    "acceptance_config",
    "aso",
    "auroc",
    "auroc_triple",
    "benchmark_methods",
    "estimate_transition",
    "generate_hypercube",
    "inject_class_conditional",
    "inject_uniform",
    "known_methods",
    "load_detector",
    "median",
    "read_bundle",
    "run_benchmark",
    "spearman",
    "trace_model",
    "train_model",
    "write_bundle",
]


class Detector:
    """A post-hoc scoring function; higher scores mean more in-distribution."""

    def __init__(self, method, overrides=None, _impl=None):
        self._impl = _impl or _core.Detector(method, json.dumps(overrides or {}))

    def fit(self, id_train, id_val, ood_val=None, label_source="TRAIN", model=None):
        self._impl.fit(id_train, id_val, ood_val, label_source, None if model is None else os.fspath(model))
        return self

    def score(self, data):
        return self._impl.score(data)

    def save(self, path):
        self._impl.save(os.fspath(path))

    @property
    def method(self):
        return self._impl.method

    @property
    def params(self):
        return json.loads(self._impl.params_json)


def load_detector(path):
    return Detector(None, _impl=_core.load_detector(os.fspath(path)))


def read_bundle(path):
    """Returns (tensors, metadata) for a bundle directory."""
    b = _core.read_bundle(os.fspath(path))
    return b["tensors"], json.loads(b["metadata"])


def write_bundle(path, tensors, name="bundle", metadata=None):
    _core.write_bundle(os.fspath(path), name, tensors, json.dumps(metadata or {}))


def generate_hypercube(out, **options):
    _core.generate_hypercube(os.fspath(out), json.dumps(options))


def train_model(data, out, hidden=(64, 64), epochs=200, learning_rate=0.05, batch_size=64, momentum=0.9, seed=0,
                label_key="label"):
    """Trains an MLP and writes out/early and out/last. Returns their epochs."""
    return _core.train_model(os.fspath(data), list(hidden), epochs, learning_rate, batch_size, momentum, seed,
                             label_key, os.fspath(out))


def acceptance_config():
    return json.loads(_core.acceptance_config())


def run_benchmark(config, output=None, resume=False):
    """Runs a run-matrix config (dict or JSON file path) and writes its reports."""
    if isinstance(config, (str, os.PathLike)):
        with open(config) as f:
            config = json.load(f)
    return _core.run_benchmark(json.dumps(config), os.fspath(output) if output else "", resume)
