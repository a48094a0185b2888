"""Strict YAML run configuration.

Schema (all sections optional unless a command needs them)::

    experiment: persistence_scan | race_fclt | iid_tails | slowvar | tree_maxdeg |
                index_asymptotics | uniform_tree | tail_bounds | mdp_rates |
                embedding_equivalence
    model:
      f: {kind: constant, c: 1} | {kind: affine, alpha: 1} | {kind: power, alpha: 0.3}
         | {kind: table, values: [...] or path: FILE, tail: <f>, monotone: bool, Cf: real}
         | {kind: composite, op: sum | product, parts: [<f>, <f>, ...]}
      m: {kind: constant, m: 1} | {kind: point, m: 3} | {kind: geometric, p: 0.5}
         | {kind: zipf, s: 1.5, cap: 10000} | {kind: logpower, nu: 2}
    control: {f: <f>, m: <m>}        # opposite-regime model, where a suite uses one
    scales: {...}                    # suite- or command-specific keys, see SCALE_KEYS
    replicates: int >= 1
    rng: {master_seed: 0 .. 2**64 - 1}
    output: {dir: PATH}
    resources: {max_events: int, max_vertices: int}
    threads: int >= 1

Unknown keys, duplicate keys and type errors are all collected and reported
together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import yaml

from .attachment import ModelError, Phi2Status, ensure_phi_table
from .experiments import DEFAULTS, SUITES, ExperimentConfig, ModelSpec, build_function
from .graphsim import AttachmentSequence

U64_MAX = (1 << 64) - 1

COMMAND_SCALES = {
    "simulate-graph": {"n_max", "checkpoints"},
    "simulate-ctbp": {"until_size", "until_time", "times"},
    "race": {"init", "steps"},
}
SCALE_KEYS = {name: set(d["scales"]) for name, d in DEFAULTS.items()}
ALL_SCALE_KEYS = set().union(*SCALE_KEYS.values(), *COMMAND_SCALES.values())

F_KEYS = {
    "constant": {"c"},
    "affine": {"alpha"},
    "power": {"alpha"},
    "table": {"values", "path", "tail", "monotone", "Cf"},
    "composite": {"op", "parts"},
}
M_KEYS = {
    "constant": {"m"},
    "point": {"m"},
    "geometric": {"p"},
    "zipf": {"s", "cap"},
    "logpower": {"nu"},
}
INT_SCALES = {"n_max", "steps", "until_size", "criterion_n", "factor", "A1", "A2"}
REAL_SCALES = {"until_time", "x", "contrast_s", "control_inflation"}
TOP_KEYS = {"experiment", "model", "control", "scales", "replicates", "rng", "output",
            "resources", "threads"}


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.errors))


class _StrictLoader(yaml.SafeLoader):
    """SafeLoader that records duplicate mapping keys instead of overwriting."""

    def __init__(self, stream):
        super().__init__(stream)
        self.duplicates: list[str] = []

    def construct_mapping(self, node, deep=False):
        seen = set()
        for key_node, _ in node.value:
            key = self.construct_object(key_node, deep=deep)
            if key in seen:
                self.duplicates.append(f"duplicate key {key!r} (line {key_node.start_mark.line + 1})")
            seen.add(key)
        return super().construct_mapping(node, deep=deep)


def load_yaml(text: str) -> tuple[Any, list[str]]:
    loader = _StrictLoader(text)
    try:
        data = loader.get_single_data()
    finally:
        loader.dispose()
    return data, loader.duplicates


@dataclass(frozen=True)
class RunConfig:
    experiment: Optional[str]
    model: Optional[ModelSpec]
    control: Optional[ModelSpec]
    scales: dict
    replicates: Optional[int]
    master_seed: int
    out_dir: Optional[str]
    max_events: int
    max_vertices: int
    threads: int

    def experiment_config(self, name: Optional[str] = None, seed: Optional[int] = None,
                          reps: Optional[int] = None, out_dir: Optional[str] = None
                          ) -> ExperimentConfig:
        name = name or self.experiment
        if name is None:
            raise ConfigError(["no experiment named on the command line or in the config"])
        if name not in SUITES:
            raise ConfigError([f"unknown experiment {name!r}; choose from {', '.join(SUITES)}"])
        errs = _cross_field(name, self.model)
        if errs:
            raise ConfigError(errs)
        d = DEFAULTS[name]
        model = self.model or ModelSpec.from_specs(d["f"], d.get("m"))
        if self.control is not None:
            control = self.control
        elif self.model is None and d.get("control"):
            control = ModelSpec.from_specs(d["control"]["f"], d["control"].get("m"))
        else:
            control = None
        scales = {**d["scales"], **{k: v for k, v in self.scales.items() if k in SCALE_KEYS[name]}}
        return ExperimentConfig(name=name, model=model, control=control, scales=scales,
                                replicates=reps or self.replicates or d["replicates"],
                                master_seed=self.master_seed if seed is None else seed,
                                out_dir=out_dir or self.out_dir, max_events=self.max_events,
                                max_vertices=self.max_vertices)


def default_run_config() -> RunConfig:
    return RunConfig(None, None, None, {}, None, 0, None, 10**7, 10**7, 1)


# ---------------------------------------------------------------------------
# validation


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return (isinstance(v, (int, float)) and not isinstance(v, bool)) and math.isfinite(v)


def _check_keys(d: dict, allowed: set, where: str, errors: list[str]) -> None:
    for k in d:
        if k not in allowed:
            errors.append(f"{where}: unknown key {k!r}")


def _check_f(spec, where: str, errors: list[str]) -> None:
    if not isinstance(spec, dict):
        errors.append(f"{where}: expected a mapping")
        return
    kind = spec.get("kind")
    if kind not in F_KEYS:
        errors.append(f"{where}.kind: must be one of {sorted(F_KEYS)}, got {kind!r}")
        return
    _check_keys(spec, F_KEYS[kind] | {"kind"}, where, errors)
    if kind == "constant" and "c" in spec and not (_is_num(spec["c"]) and spec["c"] > 0):
        errors.append(f"{where}.c: must be a positive number")
    if kind in ("affine", "power"):
        a = spec.get("alpha", 1.0 if kind == "affine" else None)
        if a is None:
            errors.append(f"{where}.alpha: required")
        elif not _is_num(a):
            errors.append(f"{where}.alpha: must be a number")
        elif a < 0:
            errors.append(f"{where}.alpha: must be >= 0, got {a}")
    if kind == "table":
        if ("values" in spec) == ("path" in spec):
            errors.append(f"{where}: give exactly one of 'values' and 'path'")
        if "values" in spec and not (isinstance(spec["values"], list) and spec["values"]
                                     and all(_is_num(v) for v in spec["values"])):
            errors.append(f"{where}.values: must be a nonempty list of numbers")
        if "tail" in spec:
            _check_f(spec["tail"], f"{where}.tail", errors)
        if "monotone" in spec and not isinstance(spec["monotone"], bool):
            errors.append(f"{where}.monotone: must be true or false")
        if "Cf" in spec and not (_is_num(spec["Cf"]) and spec["Cf"] > 0):
            errors.append(f"{where}.Cf: must be a positive number")
    if kind == "composite":
        if spec.get("op") not in ("sum", "product"):
            errors.append(f"{where}.op: must be 'sum' or 'product'")
        parts = spec.get("parts")
        if not (isinstance(parts, list) and len(parts) >= 2):
            errors.append(f"{where}.parts: must list at least two functions")
        else:
            for i, p in enumerate(parts):
                _check_f(p, f"{where}.parts[{i}]", errors)


def _check_m(spec, where: str, errors: list[str]) -> None:
    if not isinstance(spec, dict):
        errors.append(f"{where}: expected a mapping")
        return
    kind = spec.get("kind")
    if kind not in M_KEYS:
        errors.append(f"{where}.kind: must be one of {sorted(M_KEYS)}, got {kind!r}")
        return
    _check_keys(spec, M_KEYS[kind] | {"kind"}, where, errors)
    if "m" in spec and not (_is_int(spec["m"]) and spec["m"] >= 1):
        errors.append(f"{where}.m: must be an integer >= 1")
    if "p" in spec and not (_is_num(spec["p"]) and 0 < spec["p"] <= 1):
        errors.append(f"{where}.p: must lie in (0, 1]")
    if "s" in spec and not (_is_num(spec["s"]) and spec["s"] > 1):
        errors.append(f"{where}.s: must be > 1")
    if "cap" in spec and not (_is_int(spec["cap"]) and spec["cap"] >= 1):
        errors.append(f"{where}.cap: must be an integer >= 1")
    if "nu" in spec and not (_is_num(spec["nu"]) and spec["nu"] >= 0):
        errors.append(f"{where}.nu: must be >= 0")


def _check_model(section, where: str, errors: list[str]) -> Optional[ModelSpec]:
    if not isinstance(section, dict):
        errors.append(f"{where}: expected a mapping")
        return None
    _check_keys(section, {"f", "m"}, where, errors)
    n_before = len(errors)
    if "f" not in section:
        errors.append(f"{where}.f: required")
    else:
        _check_f(section["f"], f"{where}.f", errors)
    if "m" in section:
        _check_m(section["m"], f"{where}.m", errors)
    if len(errors) > n_before:
        return None
    try:
        return ModelSpec.from_specs(section["f"], section.get("m"))
    except (ModelError, ValueError, OSError) as exc:
        errors.append(f"{where}: {exc}")
        return None


def _is_const_one(model: ModelSpec) -> bool:
    f = model.f_spec
    return f.get("kind") == "constant" and float(f.get("c", 1.0)) == 1.0


def _is_m_one(model: ModelSpec) -> bool:
    m = model.m_spec
    return m.get("kind") in ("constant", "point") and m.get("m", 1) == 1


def _cross_field(name: Optional[str], model: Optional[ModelSpec]) -> list[str]:
    errors: list[str] = []
    if name is None or model is None:
        return errors
    if name == "uniform_tree":
        if not _is_const_one(model):
            errors.append("f must be constant 1 for uniform_tree")
        if not _is_m_one(model):
            errors.append("m must be constant 1 for uniform_tree")
    if name == "embedding_equivalence" and not _is_m_one(model):
        errors.append("m must be constant 1 for embedding_equivalence (tree case)")
    if name in ("index_asymptotics", "race_fclt"):
        try:
            status = ensure_phi_table(model.f, degree_needed=4096).phi2_status
        except Exception as exc:  # pragma: no cover - reported, not raised
            errors.append(f"could not classify Phi_2 for {name}: {exc}")
        else:
            if status is Phi2Status.FINITE:
                errors.append(f"{name} predicts in the C1 regime (Phi_2(inf) = inf), "
                              f"but {model.f.describe()} has Phi_2(inf) < inf")
    return errors


def validate(data: Any, duplicates: Optional[list[str]] = None) -> RunConfig:
    errors = list(duplicates or [])
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(errors + ["top level must be a mapping"])
    _check_keys(data, TOP_KEYS, "config", errors)

    name = data.get("experiment")
    if name is not None and name not in SUITES:
        errors.append(f"experiment: unknown {name!r}; choose from {', '.join(SUITES)}")
        name = None
    model = _check_model(data["model"], "model", errors) if "model" in data else None
    control = _check_model(data["control"], "control", errors) if "control" in data else None

    scales = data.get("scales", {}) or {}
    if not isinstance(scales, dict):
        errors.append("scales: expected a mapping")
        scales = {}
    allowed = SCALE_KEYS[name] | set().union(*COMMAND_SCALES.values()) if name else ALL_SCALE_KEYS
    _check_keys(scales, allowed, "scales", errors)
    for k, v in scales.items():
        if k in INT_SCALES and not (_is_int(v) and v >= 0):
            errors.append(f"scales.{k}: must be a nonnegative integer, got {v!r}")
        if k in REAL_SCALES and not (_is_num(v) and v >= 0):
            errors.append(f"scales.{k}: must be a nonnegative number, got {v!r}")

    reps = data.get("replicates")
    if reps is not None and not (_is_int(reps) and reps >= 1):
        errors.append("replicates: must be an integer >= 1")

    seed = 0
    rng = data.get("rng", {}) or {}
    if not isinstance(rng, dict):
        errors.append("rng: expected a mapping")
    else:
        _check_keys(rng, {"master_seed"}, "rng", errors)
        seed = rng.get("master_seed", 0)
        if not (_is_int(seed) and 0 <= seed <= U64_MAX):
            errors.append("rng.master_seed: must be an unsigned 64-bit integer")
            seed = 0

    out_dir = None
    out = data.get("output", {}) or {}
    if not isinstance(out, dict):
        errors.append("output: expected a mapping")
    else:
        _check_keys(out, {"dir"}, "output", errors)
        out_dir = out.get("dir")
        if out_dir is not None and not isinstance(out_dir, str):
            errors.append("output.dir: must be a path string")

    res = data.get("resources", {}) or {}
    limits = {"max_events": 10**7, "max_vertices": 10**7}
    if not isinstance(res, dict):
        errors.append("resources: expected a mapping")
    else:
        _check_keys(res, set(limits), "resources", errors)
        for k in limits:
            if k in res:
                if _is_int(res[k]) and res[k] >= 1:
                    limits[k] = res[k]
                else:
                    errors.append(f"resources.{k}: must be an integer >= 1")

    threads = data.get("threads", 1)
    if not (_is_int(threads) and threads >= 1):
        errors.append("threads: must be an integer >= 1")
        threads = 1

    errors.extend(_cross_field(name, model))
    if errors:
        raise ConfigError(errors)
    return RunConfig(experiment=name, model=model, control=control, scales=dict(scales),
                     replicates=reps, master_seed=seed, out_dir=out_dir,
                     max_events=limits["max_events"], max_vertices=limits["max_vertices"],
                     threads=threads)


def parse_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError([f"config file not found: {p}"])
    try:
        data, dups = load_yaml(p.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError([f"YAML syntax error: {exc}"]) from None
    return validate(data, dups)


def parse_config_text(text: str) -> RunConfig:
    try:
        data, dups = load_yaml(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"YAML syntax error: {exc}"]) from None
    return validate(data, dups)


__all__ = ["ConfigError", "RunConfig", "parse_config", "parse_config_text", "validate",
           "default_run_config", "build_function", "AttachmentSequence"]
