"""JSON configuration documents: schema, validation and object construction."""
from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .certificates import VARIANTS, PacBayesConfig
from .density_lab.checks import CHECKS, LabSetup
from .langevin import GRAD_MODES, SgldConfig
from .problems import KINDS, make_problem
from .schedule import StepSchedule


class ConfigError(ValueError):
    """The configuration document is malformed or violates a module invariant."""


_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_count = {"type": "integer", "minimum": 0}
_seed = {"type": "integer", "minimum": 0, "maximum": 2**64 - 1}

_schedule = {
    "oneOf": [
        {
            "type": "object",
            "properties": {"kind": {"const": "constant"}, "c": _pos, "N_max": _count},
            "required": ["kind", "c", "N_max"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "kind": {"const": "polynomial"},
                "c": _pos,
                "alpha": {"type": "number", "minimum": 0, "maximum": 1},
                "N_max": _count,
            },
            "required": ["kind", "c", "alpha", "N_max"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"kind": {"const": "explicit"}, "values": {"type": "array", "items": _pos}},
            "required": ["kind", "values"],
            "additionalProperties": False,
        },
    ]
}

_family_params = {
    "type": "object",
    "properties": {
        "B": _pos,
        "Y": _pos,
        "W": _pos,
        "noise_std": _nonneg,
        "C": _pos,
        "task_seed": _seed,
        "a": _pos,
        "c": _pos,
        "temp": _pos,
        "delta": _pos,
        "A": _pos,
        "s2": _pos,
    },
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "problem": {
            "type": "object",
            "properties": {
                "kind": {"enum": list(KINDS)},
                "n": {"type": "integer", "minimum": 2},
                "d": {"type": "integer", "minimum": 1},
                "seed": _seed,
                "params": _family_params,
            },
            "required": ["kind", "n"],
            "additionalProperties": False,
        },
        "algorithm": {
            "type": "object",
            "properties": {
                "beta": _pos,
                "lambda": _nonneg,
                "sigma0": _pos,
                "N": _count,
                "grad_mode": {"enum": list(GRAD_MODES)},
                "batch_size": {"type": "integer", "minimum": 1},
                "seed": _seed,
                "snapshot_every": _count,
                "noise": {"type": "boolean"},
                "replicas": {"type": "integer", "minimum": 1},
            },
            "required": ["beta", "sigma0"],
            "additionalProperties": False,
        },
        "schedule": _schedule,
        "certificate": {
            "type": "object",
            "properties": {
                "variants": {"type": "array", "items": {"enum": list(VARIANTS)}, "uniqueItems": True},
                "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "M": _pos,
                "conservative": {"type": "boolean"},
                "replicas": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "lab": {
            "type": "object",
            "properties": {
                "check": {"enum": list(CHECKS)},
                "kind": {"enum": list(KINDS)},
                "n": {"type": "integer", "minimum": 2},
                "seed": _seed,
                "eta": _pos,
                "beta": _pos,
                "sigma0": _pos,
                "lambda": _nonneg,
                "M": {"type": "integer", "minimum": 64},
                "steps": {"type": "integer", "minimum": 1},
                "slack": _nonneg,
                "i_star": _count,
                "L_drift": _pos,
                "horizon": _pos,
                "trials": {"type": "integer", "minimum": 1},
                "params": _family_params,
            },
            "additionalProperties": False,
        },
        "experiment": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["gap", "stability"]},
                "replicas": {"type": "integer", "minimum": 2},
                "test_size": {"type": "integer", "minimum": 2},
                "dataset_seeds": {"type": "array", "items": _seed, "minItems": 1},
                "probes": {"type": "integer", "minimum": 1},
                "differing_index": _count,
                "grid": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "properties": {
                            "schedule": _schedule,
                            "N": _count,
                            "n": {"type": "integer", "minimum": 2},
                            "lambda": _nonneg,
                            "beta": _pos,
                        },
                        "required": ["schedule", "N", "n", "lambda", "beta"],
                        "additionalProperties": False,
                    },
                },
                "fence": {
                    "type": "object",
                    "properties": {
                        "n": {"type": "integer", "minimum": 2, "multipleOf": 2},
                        "seed": _seed,
                        "eta": _pos,
                        "beta": _pos,
                        "N": _count,
                        "replicas": {"type": "integer", "minimum": 2},
                        "epsilon": _pos,
                        "grad_mode": {"enum": ["single", "full"]},
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}


def _path(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    return "/" + "/".join(parts) if parts else "/"


def _intended_branch_error(err: jsonschema.ValidationError) -> jsonschema.ValidationError:
    """For a tagged union, report the failure of the branch whose ``kind`` matched."""
    by_branch: dict[int, list] = {}
    for sub in err.context:
        by_branch.setdefault(sub.relative_schema_path[0], []).append(sub)
    for subs in by_branch.values():
        if not any(list(e.absolute_path)[-1:] == ["kind"] for e in subs):
            return subs[0]
    return err


def validate(doc: dict) -> None:
    """Schema check; raises ConfigError naming the offending field."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(list(e.absolute_path)), e.message))
    if errors:
        err = errors[0]
        if err.validator == "oneOf" and err.context:
            err = _intended_branch_error(err)
        raise ConfigError(f"config {_path(err)}: {err.message}")


def load(path) -> dict:
    """Read a config document, unwrapping run manifests so any manifest replays its run."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if isinstance(doc, dict) and doc.get("tool") == "sgld-bounds" and "config" in doc:
        doc = doc["config"]
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    validate(doc)
    return doc


def with_seed(doc: dict, seed: int | None, command: str = "run") -> dict:
    """Apply a command-line seed to the sections the command draws randomness from.

    The seed replaces the algorithm seed (or the lab / fence seed for those
    commands); a problem section without its own seed inherits it too.
    """
    doc = copy.deepcopy(doc)
    if seed is None:
        return doc
    if command == "lab":
        doc.setdefault("lab", {})["seed"] = seed
    elif command == "demo":
        doc.setdefault("experiment", {}).setdefault("fence", {})["seed"] = seed
    else:
        if "algorithm" in doc:
            doc["algorithm"]["seed"] = seed
        if "problem" in doc:
            doc["problem"].setdefault("seed", seed)
    return doc


def _require(doc: dict, *sections: str) -> None:
    missing = [s for s in sections if s not in doc]
    if missing:
        raise ConfigError(f"config is missing section(s): {', '.join(missing)}")


def build_problem(doc: dict):
    _require(doc, "problem")
    p = doc["problem"]
    try:
        return make_problem(p["kind"], p["n"], p.get("d", 1), p.get("seed", 0), **p.get("params", {}))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"config /problem: {exc}") from None


def build_schedule(spec: dict) -> StepSchedule:
    try:
        return StepSchedule.from_dict(spec)
    except ValueError as exc:
        raise ConfigError(f"config /schedule: {exc}") from None


def build_sgld(doc: dict) -> SgldConfig:
    _require(doc, "algorithm", "schedule")
    a = doc["algorithm"]
    try:
        return SgldConfig(
            beta=a["beta"],
            lam=a.get("lambda", 0.0),
            sigma0=a["sigma0"],
            schedule=build_schedule(doc["schedule"]),
            N=a.get("N"),
            grad_mode=a.get("grad_mode", "single"),
            batch_size=a.get("batch_size", 1),
            seed=a.get("seed", 0),
            snapshot_every=a.get("snapshot_every", 0),
            noise=a.get("noise", True),
        )
    except ValueError as exc:
        raise ConfigError(f"config /algorithm: {exc}") from None


def build_pac_bayes(doc: dict) -> PacBayesConfig:
    c = doc.get("certificate", {})
    return PacBayesConfig(delta=c.get("delta", 0.05), M=c.get("M"), conservative=c.get("conservative", False))


def build_lab(doc: dict, check: str | None = None) -> tuple[str, LabSetup]:
    lab = dict(doc.get("lab", {}))
    check = check or lab.pop("check", None)
    lab.pop("check", None)
    if check is None:
        raise ConfigError("no lab check given (use --check or lab.check)")
    if check not in CHECKS:
        raise ConfigError(f"unknown lab check {check!r}")
    if "lambda" in lab:
        lab["lam"] = lab.pop("lambda")
    if "params" in lab:
        lab["family"] = lab.pop("params")
    try:
        setup = LabSetup(**lab)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"config /lab: {exc}") from None
    if check == "kl_onestep" and setup.eta * setup.lam >= 0.5:
        raise ConfigError("config /lab: kl_onestep violates the step-size assumption eta * lambda < 0.5")
    return check, setup
