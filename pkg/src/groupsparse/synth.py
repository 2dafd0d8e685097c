"""Deterministic synthetic datasets written as CSV plus ``ground_truth.json``."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .groups import GroupPartition
from .rng import stream
from .seqattnpp.data import planted_block_teacher

SYNTH_KINDS = ("planted_group_sparse_regression", "planted_block_teacher_classification")


def _write_csv(path: Path, header: list[str], rows: np.ndarray, int_last: bool = False) -> None:
    lines = [",".join(header)]
    for r in rows:
        cells = [format(float(v), ".17g") for v in (r[:-1] if int_last else r)]
        if int_last:
            cells.append(str(int(r[-1])))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


def _regression(spec: dict, out: Path) -> dict:
    groups = int(spec.get("groups", 6))
    size = int(spec.get("group_size", 2))
    k = int(spec.get("planted", 2))
    m = int(spec.get("samples", 40))
    noise = float(spec.get("noise", 0.0))
    design = spec.get("design", "orthonormal")
    n = groups * size
    if not 0 <= k <= groups:
        raise ValueError(f"cannot plant {k} of {groups} groups")
    if design not in ("orthonormal", "gaussian"):
        raise ValueError("design must be 'orthonormal' or 'gaussian'")
    if design == "orthonormal" and m < n:
        raise ValueError(f"orthonormal design needs samples >= {n}")
    if noise < 0:
        raise ValueError("noise must be nonnegative")
    rng = stream(int(spec.get("seed", 0)), "synth", "regression")
    if design == "orthonormal":
        X, _ = np.linalg.qr(rng.normal(size=(m, n)))
    else:
        X = rng.normal(size=(m, n)) / np.sqrt(m)
    P = GroupPartition.contiguous([size] * groups)
    S = sorted(int(i) for i in rng.choice(groups, size=k, replace=False))
    beta = np.zeros(n)
    for i in S:
        beta[P.index(i)] = rng.normal(size=size) + np.sign(rng.normal(size=size))
    y = X @ beta + noise * rng.normal(size=m)
    _write_csv(out / "data.csv", [f"x{j}" for j in range(n)] + ["y"], np.column_stack([X, y]))
    return {"kind": "planted_group_sparse_regression", "partition": P.to_config(), "support": S,
            "beta": beta.tolist(), "label_column": "y", "noise": noise, "design": design}


def _teacher(spec: dict, out: Path) -> dict:
    keys = ("input_dim", "n_classes", "hidden", "block_size", "n_planted", "n_train", "n_test",
            "logit_scale", "temperature")
    kw = {k: spec[k] for k in keys if k in spec}
    kw.setdefault("n_train", 2048)
    kw.setdefault("n_test", 1024)
    task = planted_block_teacher(stream(int(spec.get("seed", 0)), "synth", "teacher"), **kw)
    header = [f"x{j}" for j in range(task.X_train.shape[1])] + ["label"]
    _write_csv(out / "train.csv", header, np.column_stack([task.X_train, task.y_train]), int_last=True)
    _write_csv(out / "test.csv", header, np.column_stack([task.X_test, task.y_test]), int_last=True)
    return {"kind": "planted_block_teacher_classification", **task.ground_truth(), "label_column": "label",
            "teacher_kernel": task.teacher_kernel.tolist(), "readout": task.readout.tolist()}


def generate_synthetic(spec: dict, out_dir: str | Path) -> Path:
    """Write the dataset for ``spec`` into ``out_dir``; returns the directory.

    Same spec and seed give byte-identical files.
    """
    kind = spec.get("kind")
    if kind not in SYNTH_KINDS:
        raise ValueError(f"kind must be one of {SYNTH_KINDS}, got {kind!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    truth = _regression(spec, out) if kind == SYNTH_KINDS[0] else _teacher(spec, out)
    truth["seed"] = int(spec.get("seed", 0))
    (out / "ground_truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")
    return out
