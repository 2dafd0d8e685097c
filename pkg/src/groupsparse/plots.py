"""Plot-ready ``.dat`` exports (whitespace-separated, ``#`` header) from a run directory."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .seqattnpp.schedule import acdc_schedule, seqattnpp_schedule, sparsity_at
from .seqattnpp.train import TrainConfig

CURVE_POINTS = 201


def _write_dat(path: Path, header: list[str], rows) -> None:
    lines = ["# " + " ".join(header)]
    for r in rows:
        lines.append(" ".join(v if isinstance(v, str) else format(float(v), ".10g") for v in r))
    path.write_text("\n".join(lines) + "\n")


def schedule_curves(cfg: TrainConfig, exponents=None) -> tuple[list[str], np.ndarray]:
    """Sparsity against training progress for the ACDC and SequentialAttention++
    layouts of ``cfg`` (one SequentialAttention++ column per exponent)."""
    exponents = list(exponents or [cfg.sparsify_exponent])
    steps = cfg.steps
    cols = [np.arange(steps) / steps]
    cols.append(acdc_schedule(steps, cfg.target_sparsity, cfg.cycles, cfg.dense_frac,
                              cfg.finetune_frac).sparsity_curve())
    for c in exponents:
        cols.append(seqattnpp_schedule(steps, cfg.target_sparsity, cfg.cycles, cfg.dense_frac,
                                       cfg.finetune_frac, c).sparsity_curve())
    header = ["progress", "acdc"] + [f"seqattnpp_c{c:g}" for c in exponents]
    return header, np.column_stack(cols)


def exponential_curve(s: float, exponents) -> tuple[list[str], np.ndarray]:
    t = np.linspace(0.0, 1.0, CURVE_POINTS)
    cols = [t] + [np.array([sparsity_at(float(x), s, c) for x in t]) for c in exponents]
    return ["t"] + [f"c{c:g}" for c in exponents], np.column_stack(cols)


def export_plots(results_dir: str | Path) -> list[Path]:
    """Write ``plots/*.dat`` under ``results_dir``; returns the files written."""
    root = Path(results_dir)
    path = root / "results.json"
    if not path.exists():
        raise FileNotFoundError(f"no results.json in {root}")
    results = json.loads(path.read_text())
    if not results.get("per_seed") or not results.get("summary"):
        raise ValueError(f"{root} holds an empty sweep; nothing to plot")
    cfg = results["config"]
    out = root / "plots"
    out.mkdir(exist_ok=True)
    written = []

    def emit(name, header, rows):
        p = out / name
        _write_dat(p, header, rows)
        written.append(p)

    kind = cfg["kind"]
    if kind in ("pruning_compare", "schedule_ablation"):
        tc = TrainConfig.from_config(cfg["train"])
        exps = cfg.get("exponents") or [tc.sparsify_exponent]
        emit("schedule_curves.dat", *schedule_curves(tc, exps))
        emit("exponential_schedule.dat", *exponential_curve(tc.target_sparsity, exps))
        for trace in sorted(root.glob("seed_*/*_trace.csv")):
            with open(trace, newline="") as fh:
                rows = [(r["step"], r["loss"], r["eval_metric"] or "nan", r["active_groups"])
                        for r in csv.DictReader(fh)]
            emit(f"{trace.parent.name}_{trace.stem}_loss.dat",
                 ["step", "train_loss", "eval_loss", "active_groups"], rows)
        if kind == "pruning_compare":
            emit("metric_vs_sparsity.dat", ["algorithm", "sparsity", "block_size", "median_eval_loss"],
                 [(r["algorithm"], r["sparsity"], r["block_size"], r["median_eval_loss"])
                  for r in results["summary"]])
        else:
            emit("metric_vs_exponent.dat", ["exponent", "median_eval_loss"],
                 [(r["exponent"], r["median_eval_loss"]) for r in results["summary"]])
    elif kind == "ompr_recovery":
        for hist in sorted(root.glob("seed_*/*_history.csv")):
            with open(hist, newline="") as fh:
                rows = [(r["round"], r["objective"]) for r in csv.DictReader(fh)]
            emit(f"{hist.parent.name}_{hist.stem}.dat", ["round", "objective"], rows)
    elif kind == "equivalence":
        kinds = cfg["mask_kinds"]
        emit("relative_gaps.dat", ["seed"] + kinds,
             [[seed] + [rec[k]["relative_gap"] for k in kinds] for seed, rec in results["per_seed"].items()])
    else:
        emit("pass_counts.dat", ["q", "passed", "instances"],
             [(r["q"], r["passed"], r["instances"]) for r in results["summary"]])
    return written
