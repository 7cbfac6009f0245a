"""Run configuration files.

A run config is a JSON object with the blocks ``dataset``, ``teacher``,
``student``, ``training`` (student distillation settings),
``teacher_training`` (overrides applied on top of ``training`` when training
the teacher) and ``outputs``. It is validated against :data:`SCHEMA` before
anything runs; unknown keys are errors.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from . import data
from .distill import METHODS, DistillConfig, ModelSpec
from .errors import ConfigError
from .ot import SolverConfig

_NET = {
    "type": "object",
    "additionalProperties": False,
    "required": ["hidden", "latent"],
    "properties": {
        "hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "latent": {"type": "integer", "minimum": 1},
        "activation": {"enum": ["relu", "tanh"]},
        "head_hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}},
    },
}

_TRAINING = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "metric": {"enum": list(METHODS)},
        "lambda": {"type": "number", "minimum": 0},
        "beta": {"type": "number", "minimum": 0},
        "gaussian_mode": {"enum": ["diagonal", "full"]},
        "ridge": {"type": "number", "exclusiveMinimum": 0},
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": ["auto", "exact", "sinkhorn"]},
                "epsilon": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "epsilon_scale": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "exact_max_size": {"type": "integer", "minimum": 1},
            },
        },
        "lr0": {"type": "number", "exclusiveMinimum": 0},
        "momentum": {"type": "number", "minimum": 0, "maximum": 1},
        "lr_min": {"type": "number", "minimum": 0},
        "epochs": {"type": "integer", "minimum": 0},
        "batch_size": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "kd_temperature": {"type": "number", "exclusiveMinimum": 0},
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["dataset", "teacher", "student"],
    "properties": {
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["moons", "blobs", "spirals", "csv"]},
                "n": {"type": "integer", "minimum": 2},
                "noise": {"type": "number", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "path": {"type": "string"},
                "n_classes": {"type": "integer", "minimum": 1},
                "dim": {"type": "integer", "minimum": 1},
                "spread": {"type": "number", "minimum": 0},
                "turns": {"type": "number", "exclusiveMinimum": 0},
                "test_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "teacher": _NET,
        "student": _NET,
        "training": _TRAINING,
        "teacher_training": _TRAINING,
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {"type": "string"} for k in
                           ("teacher_model", "student_model", "teacher_log", "student_log", "figure")},
        },
    },
}


def distill_config(block: dict | None, base: DistillConfig | None = None) -> DistillConfig:
    block = dict(block or {})
    base = base or DistillConfig()
    if "lambda" in block:
        block["lam"] = block.pop("lambda")
    if "solver" in block:
        solver = {**base.solver.__dict__, **block.pop("solver")}
        block["solver"] = SolverConfig(**solver)
    return base.replace(**block)


@dataclass
class RunConfig:
    dataset: dict
    teacher: dict
    student: dict
    training: DistillConfig
    teacher_training: DistillConfig
    outputs: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    @property
    def test_fraction(self) -> float:
        return self.dataset.get("test_fraction", 0.3)

    @property
    def split_seed(self) -> int:
        return self.dataset.get("seed", 0)

    def load_data(self) -> tuple[data.Dataset, data.Dataset, data.Dataset]:
        """Full dataset plus its stratified ``(train, test)`` split."""
        ds = dict(self.dataset)
        kind = ds.pop("kind")
        ds.pop("test_fraction", None)
        if kind == "csv":
            if "path" not in ds:
                raise ConfigError("dataset.kind 'csv' needs dataset.path")
            full = data.load_csv(self.base_dir / ds["path"], ds.get("n_classes"))
        else:
            if "n" not in ds:
                raise ConfigError("generated datasets need dataset.n")
            full = data.make_dataset(kind, ds.pop("n"), ds.pop("seed", 0), ds.pop("noise", None), **ds)
        train, test = data.split(full, self.test_fraction, self.split_seed)
        return full, train, test

    def model_spec(self, which: str, n_in: int, n_classes: int) -> ModelSpec:
        net = self.teacher if which == "teacher" else self.student
        return ModelSpec.build(n_in, tuple(net["hidden"]), net["latent"], n_classes,
                               net.get("activation", "relu"), tuple(net.get("head_hidden", ())))


def parse_run_config(doc: dict, base_dir=".") -> RunConfig:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None
    training = distill_config(doc.get("training"))
    teacher_training = distill_config(doc.get("teacher_training"), training.replace(metric="none", lam=0.0))
    if doc["teacher"]["latent"] != doc["student"]["latent"]:
        raise ConfigError(f"student latent dim {doc['student']['latent']} != "
                          f"teacher latent dim {doc['teacher']['latent']}")
    return RunConfig(doc["dataset"], doc["teacher"], doc["student"], training, teacher_training,
                     doc.get("outputs", {}), Path(base_dir))


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_run_config(doc, path.parent)
