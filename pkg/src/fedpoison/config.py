"""YAML experiment configuration: parsing, validation and defaults.

A config file looks like::

    seed: 7
    output: reports
    experiments:
      - name: table4-iid
        mode: federated            # or centralized
        classification: multiclass # or binary
        dataset:
          synthetic: {n_classes: 4, n_features: 8, n_per_class: 375, separation: 6.0}
          # csv: {path: data.csv, label_column: Attack_type, drop_columns: [...]}
        preprocessing: {train_fraction: 0.8, stratified: false, smote: false, smote_k: 5}
        model: {hidden_dims: [64], init_range: 0.05}
        training: {learning_rate: 0.1, local_epochs: 3, batch_size: 100}
        federation: {honest: 3, malicious: 7, rounds: 10, distribution: iid}
        attack: {strategy: swap, target_class: Normal, poison_ratio: 1.0}
        alphas: [0.0, 0.6]
        repetitions: 1

Every error names the offending key path and the line it came from.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass
from pathlib import Path

import yaml

from fedpoison.attacks import AttackConfig
from fedpoison.errors import ConfigError
from fedpoison.nn import TrainingHyperparams

# federated vs centralized defaults for the training section
FEDERATED_TRAINING = {"local_epochs": 3, "batch_size": 100}
CENTRALIZED_TRAINING = {"local_epochs": 25, "batch_size": 800}
FEDERATION_DEFAULTS = {
    "honest": 10,
    "malicious": 0,
    "c_honest": 1.0,
    "c_malicious": 1.0,
    "rounds": 10,
    "distribution": "iid",
    "beta": 0.5,
}
PREPROCESSING_DEFAULTS = {
    "train_fraction": 0.8,
    "stratified": False,
    "smote": False,
    "smote_k": 5,
}
MODEL_DEFAULTS = {"hidden_dims": [64], "init_range": 0.05}
SYNTHETIC_DEFAULTS = {"n_classes": 4, "n_features": 8, "n_per_class": 250, "separation": 6.0}
CSV_KEYS = {"path", "label_column", "drop_columns", "normal_class"}
TOP_KEYS = {"seed", "output", "experiments"}
EXPERIMENT_KEYS = {
    "name", "mode", "classification", "dataset", "preprocessing", "model", "training",
    "federation", "attack", "alphas", "repetitions", "seed",
}
HYPER_KEYS = {f.name for f in dataclasses.fields(TrainingHyperparams)} - {"hidden_dims", "init_range"}
ATTACK_KEYS = {f.name for f in dataclasses.fields(AttackConfig)} - {"alpha"}


@dataclass
class ExperimentSpec:
    """One fully-resolved experiment; expands into one run per (repetition, alpha)."""

    name: str
    mode: str
    classification: str
    dataset: dict
    preprocessing: dict
    model: dict
    training: dict
    federation: dict
    attack: dict
    alphas: list[float]
    repetitions: int
    seed: int
    output: str = "reports"
    source: str = ""

    def hyper(self) -> TrainingHyperparams:
        return TrainingHyperparams(
            hidden_dims=tuple(self.model["hidden_dims"]),
            init_range=self.model["init_range"],
            **self.training,
        )

    def attack_config(self, alpha: float) -> AttackConfig:
        return AttackConfig(alpha=alpha, **self.attack)

    def echo(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("source")
        d.pop("output")
        return d


class _Lines:
    """Key path -> source line, built while converting YAML nodes."""

    def __init__(self, source: str):
        self.source = source
        self.lines: dict[tuple, int] = {}

    def where(self, path: tuple) -> str:
        dotted = ".".join(str(p) for p in path) or "<root>"
        probe = path
        while probe and probe not in self.lines:
            probe = probe[:-1]
        line = self.lines.get(probe)
        loc = f"{self.source}:{line}" if line else self.source
        return f"{loc}: {dotted}"

    def fail(self, path: tuple, msg: str):
        raise ConfigError(f"{self.where(path)}: {msg}")


def _convert(node, path: tuple, lines: _Lines):
    lines.lines.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        out = {}
        for knode, vnode in node.value:
            key = knode.value
            if key in out:
                lines.lines[path + (key,)] = knode.start_mark.line + 1
                lines.fail(path + (key,), "duplicate key")
            lines.lines[path + (key,)] = knode.start_mark.line + 1
            out[key] = _convert(vnode, path + (key,), lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_convert(v, path + (i,), lines) for i, v in enumerate(node.value)]
    return yaml.SafeLoader.construct_object(yaml.SafeLoader(""), node, deep=True)


def _load(text: str, source: str):
    lines = _Lines(source)
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: invalid YAML: {exc}") from None
    if node is None:
        raise ConfigError(f"{source}: empty config")
    return _convert(node, (), lines), lines


def _keys(d, allowed, path, lines: _Lines):
    if not isinstance(d, dict):
        lines.fail(path, f"expected a mapping, got {type(d).__name__}")
    for k in d:
        if k not in allowed:
            lines.fail(path + (k,), f"unknown key; allowed: {sorted(allowed)}")


def _section(exp, key, defaults, allowed, path, lines):
    raw = exp.get(key, {}) or {}
    _keys(raw, allowed, path + (key,), lines)
    out = copy.deepcopy(defaults)
    out.update(raw)
    return out


def _number(value, path, lines, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        lines.fail(path, f"expected a number, got {value!r}")
    if kind is int and not isinstance(value, int):
        lines.fail(path, f"expected an integer, got {value!r}")
    return kind(value)


def _experiment(exp, index, top_seed, output, lines: _Lines) -> ExperimentSpec:
    path = ("experiments", index)
    _keys(exp, EXPERIMENT_KEYS, path, lines)
    name = exp.get("name")
    if not isinstance(name, str) or not name:
        lines.fail(path + ("name",), "every experiment needs a non-empty string name")
    mode = exp.get("mode", "federated")
    if mode not in ("federated", "centralized"):
        lines.fail(path + ("mode",), f"must be 'federated' or 'centralized', got {mode!r}")
    classification = exp.get("classification", "multiclass")
    if classification not in ("multiclass", "binary"):
        lines.fail(path + ("classification",), f"must be 'multiclass' or 'binary', got {classification!r}")

    ds = exp.get("dataset", {"synthetic": {}})
    _keys(ds, {"synthetic", "csv"}, path + ("dataset",), lines)
    if len(ds) != 1:
        lines.fail(path + ("dataset",), "give exactly one of 'synthetic' or 'csv'")
    if "synthetic" in ds:
        syn = ds["synthetic"] or {}
        _keys(syn, set(SYNTHETIC_DEFAULTS) | {"seed"}, path + ("dataset", "synthetic"), lines)
        dataset = {"synthetic": {**SYNTHETIC_DEFAULTS, **syn}}
        for k in ("n_classes", "n_features", "n_per_class"):
            v = _number(dataset["synthetic"][k], path + ("dataset", "synthetic", k), lines, int)
            if v < 1:
                lines.fail(path + ("dataset", "synthetic", k), "must be >= 1")
    else:
        c = ds["csv"] or {}
        _keys(c, CSV_KEYS, path + ("dataset", "csv"), lines)
        for k in ("path", "label_column"):
            if not isinstance(c.get(k), str):
                lines.fail(path + ("dataset", "csv", k), "required string")
        dataset = {"csv": {"drop_columns": [], "normal_class": "Normal", **c}}

    preprocessing = _section(exp, "preprocessing", PREPROCESSING_DEFAULTS,
                             set(PREPROCESSING_DEFAULTS), path, lines)
    tf = _number(preprocessing["train_fraction"], path + ("preprocessing", "train_fraction"), lines)
    if not 0 < tf < 1:
        lines.fail(path + ("preprocessing", "train_fraction"), "must lie in (0, 1)")
    model = _section(exp, "model", MODEL_DEFAULTS, set(MODEL_DEFAULTS), path, lines)
    training_defaults = FEDERATED_TRAINING if mode == "federated" else CENTRALIZED_TRAINING
    training = _section(exp, "training", training_defaults, HYPER_KEYS, path, lines)
    federation = _section(exp, "federation", FEDERATION_DEFAULTS, set(FEDERATION_DEFAULTS), path, lines)
    if federation["distribution"] not in ("iid", "noniid"):
        lines.fail(path + ("federation", "distribution"), "must be 'iid' or 'noniid'")
    attack = _section(exp, "attack", {}, ATTACK_KEYS, path, lines)

    alphas = exp.get("alphas", [0.0])
    if not isinstance(alphas, list) or not alphas:
        lines.fail(path + ("alphas",), "must be a non-empty list")
    for i, a in enumerate(alphas):
        a = _number(a, path + ("alphas", i), lines)
        if not 0 <= a <= 1:
            lines.fail(path + ("alphas", i), f"attack rate must lie in [0, 1], got {a}")
    alphas = sorted({float(a) for a in alphas} | {0.0})
    reps = _number(exp.get("repetitions", 1), path + ("repetitions",), lines, int)
    if reps < 1:
        lines.fail(path + ("repetitions",), "must be >= 1")
    seed = _number(exp.get("seed", top_seed), path + ("seed",), lines, int)

    spec = ExperimentSpec(
        name=name, mode=mode, classification=classification, dataset=dataset,
        preprocessing=preprocessing, model=model, training=training, federation=federation,
        attack=attack, alphas=alphas, repetitions=reps, seed=seed, output=output,
        source=lines.source,
    )
    # let the dataclass validators speak, but with a location attached
    for section, build in (("training", spec.hyper), ("attack", lambda: spec.attack_config(0.0))):
        try:
            build()
        except (ConfigError, TypeError, ValueError) as exc:
            lines.fail(path + (section,), str(exc))
    return spec


def parse_config_text(text: str, source: str = "<config>", seed: int | None = None,
                      output: str | None = None) -> list[ExperimentSpec]:
    doc, lines = _load(text, source)
    _keys(doc, TOP_KEYS, (), lines)
    top_seed = _number(doc.get("seed", 0), ("seed",), lines, int)
    if seed is not None:
        top_seed = seed
    out = output or doc.get("output", "reports")
    exps = doc.get("experiments")
    if not isinstance(exps, list) or not exps:
        lines.fail(("experiments",), "must be a non-empty list")
    specs, names = [], set()
    for i, exp in enumerate(exps):
        spec = _experiment(exp, i, top_seed, out, lines)
        if seed is not None:
            spec.seed = seed
        if spec.name in names:
            lines.fail(("experiments", i, "name"), f"duplicate experiment name {spec.name!r}")
        names.add(spec.name)
        specs.append(spec)
    return specs


def parse_config(path, seed: int | None = None, output: str | None = None) -> list[ExperimentSpec]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), str(path), seed, output)
