"""Experiment configuration: defaults, loading, validation and hashing.

Configs are JSON or YAML files holding one mapping. Every key has a default
in :data:`DEFAULTS`; a config only needs ``kind`` plus overrides.
"""
from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path

import yaml

OUTPUT_ROOT_ENV = "GROUPSPARSE_OUTPUT_ROOT"
EXPERIMENT_KINDS = ("equivalence", "unique_min", "ompr_recovery", "pruning_compare", "schedule_ablation")

_SOLVER = {"max_iters": 5000, "grad_tol": 1e-8, "step_init": 1.0, "backtrack_factor": 0.5,
           "armijo_c": 1e-4, "seed": 0, "restarts": 4, "max_outer": 100}

_TRAIN = {"steps": 6000, "batch_size": 256, "lr": {"initial": 1e-2, "final": 1e-3}, "optimizer": "adam",
          "weight_decay": 3e-3, "clip_density_bound": True, "target_sparsity": 0.9, "sparsify_exponent": 4.0,
          "cycles": 3, "dense_frac": 0.2, "finetune_frac": 0.2, "eval_every": 200}

_TEACHER = {"input_dim": 64, "n_classes": 8, "hidden": 128, "block_size": 8, "n_planted": "auto",
            "n_train": 32768, "n_test": 4096, "logit_scale": 4.0, "temperature": 0.0}

DEFAULTS = {
    "equivalence": {
        "seeds": list(range(20)),
        "instance": {"n_max": 12, "t_max": 4, "max_group_size": 3, "ridge": 1e-2, "lam_range": [0.05, 0.5]},
        "mask_kinds": ["softmax", "l1", "powerprop"],
        "restarts": 16,
        "solver": _SOLVER,
    },
    "unique_min": {
        "seeds": list(range(100)),
        "instance": {"groups": 3, "group_size": 2, "samples": 12, "ridge": 1e-2, "lam_range": [0.9, 1.0]},
        "q_kinds": [{"kind": "abs"}, {"kind": "power", "p": 0.5}, {"kind": "power", "p": 2 / 3},
                    {"kind": "logsum", "eps": 1.0}, {"kind": "lambert"}],
        "distance_tol": 1e-4,
        "verify_tol": 1e-8,
        "solver": _SOLVER,
    },
    "ompr_recovery": {
        "seeds": list(range(30)),
        "ks": [1, 2, 3],
        "instance": {"groups": 6, "group_size": 2, "samples": 20, "noise": 0.0},
        "ompr": {"rounds": 50, "lam_select": "auto", "q": {"kind": "logsum", "eps": 1.0},
                 "init": "random", "selection": "both"},
        "solver": _SOLVER,
    },
    "pruning_compare": {
        "seeds": list(range(10)),
        "algorithms": ["seqattnpp", "acdc", "magnitude"],
        "sparsities": [0.9],
        "block_sizes": [8],
        "task": _TEACHER,
        "network": {"hidden": [128], "min_groups": 100, "fixed_head": True},
        "train": _TRAIN,
    },
    "schedule_ablation": {
        "seeds": list(range(3)),
        "exponents": [2.0, 4.0, 8.0],
        "algorithm": "seqattnpp",
        "task": _TEACHER,
        "network": {"hidden": [128], "min_groups": 100, "fixed_head": True},
        "train": _TRAIN,
    },
}


class ConfigError(ValueError):
    pass


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def read_mapping(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a mapping at top level")
    return data


def resolve(raw: dict) -> dict:
    """Fill defaults for the config's experiment kind and reject unknown keys."""
    kind = raw.get("kind")
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"kind must be one of {EXPERIMENT_KINDS}, got {kind!r}")
    base = DEFAULTS[kind]
    extra = set(raw) - set(base) - {"kind", "name", "output_dir"}
    if extra:
        raise ConfigError(f"unknown keys for {kind}: {sorted(extra)}")
    cfg = _merge(base, {k: v for k, v in raw.items() if k in base})
    cfg["kind"] = kind
    cfg["name"] = str(raw.get("name", kind))
    if "output_dir" in raw:
        cfg["output_dir"] = str(raw["output_dir"])
    seeds = cfg["seeds"]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError("seeds must be a nonempty list of nonnegative integers")
    return cfg


def load(path: str | Path) -> dict:
    return resolve(read_mapping(path))


def config_hash(cfg: dict) -> str:
    """SHA-256 of the canonical JSON form, ignoring where outputs go."""
    body = {k: v for k, v in cfg.items() if k != "output_dir"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def output_dir(cfg: dict, override: str | None = None) -> Path:
    """``override`` > ``$GROUPSPARSE_OUTPUT_ROOT/<name>`` > config ``output_dir`` > ``results/<name>``."""
    if override:
        return Path(override)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root:
        return Path(root) / cfg["name"]
    if "output_dir" in cfg:
        return Path(cfg["output_dir"])
    return Path("results") / cfg["name"]
