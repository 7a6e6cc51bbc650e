"""Multi-task speaking-style embeddings: training, prototype classification,
caption alignment and style manipulation."""

import json as _json

from ._parameta import (
    Dataset,
    Model,
    NumericError,
    TaskSchema,
    ValidationError,
    balanced_accuracy,
    cli,
    generate_synthetic,
    gradient_check,
    load_jsonl,
    load_model,
    macro_f1,
    split_subject_independent,
    weighted_f1,
    write_jsonl,
)
from ._parameta import train as _train


def train(dataset, config=None, steps=None, on_step=None):
    """Train on `dataset`. `config` is a dict of training options."""
    return _train(dataset, _json.dumps(config or {}), steps, on_step)


def evaluate(model, dataset):
    return _json.loads(model.evaluate(dataset))


__all__ = [
    "Dataset",
    "Model",
    "NumericError",
    "TaskSchema",
    "ValidationError",
    "balanced_accuracy",
    "cli",
    "evaluate",
    "generate_synthetic",
    "gradient_check",
    "load_jsonl",
    "load_model",
    "macro_f1",
    "split_subject_independent",
    "train",
    "weighted_f1",
    "write_jsonl",
]
