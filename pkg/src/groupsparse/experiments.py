"""Instance generators and runners for the five experiment kinds.

Each runner takes a resolved config (see :mod:`groupsparse.config`) and an
output directory, writes per-seed trace files under ``seed_<k>/`` and
returns ``(per_seed, summary)``: per-seed metric dicts keyed by seed and a
list of summary table rows. Metrics contain no timing information so that
reruns produce identical results.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .config import ConfigError
from .groups import GroupPartition, group_sparsity, support
from .objectives import LeastSquaresObjective, tau_threshold
from .ompr import OmprConfig, run_ompr
from .oracle import best_regularized, verify_global_min
from .regularizers import CompositeRegularizer, QFunction
from .reparam import MASK_KINDS, MaskedObjective, group_penalty, group_penalty_derivative, minimize_masked
from .rng import stream
from .seqattnpp.data import planted_block_teacher
from .seqattnpp.network import NetworkSpec
from .seqattnpp.schedule import retained_groups
from .seqattnpp.train import ALGORITHMS, TrainConfig, planted_recovery, train
from .solvers import SolverConfig, solve_group_lasso, solve_q_regularized

# CSV column documentation written next to every run
CSV_SCHEMA = {
    "summary.csv": "one row per summary cell; columns depend on the experiment kind and are listed in results.json",
    "seed_<k>/*_trace.csv": {
        "step": "training step, 0-based",
        "phase": "DENSE, SPARSIFICATION, SPARSE or FINETUNE",
        "loss": "mean training loss of the step's batch",
        "eval_metric": "held-out loss; empty on steps without evaluation",
        "active_groups": "unmasked blocks summed over pruned layers",
    },
    "seed_<k>/*_history.csv": {
        "round": "accepted swap number, 1-based",
        "in": "group index swapped into the support",
        "out": "group index swapped out of the support",
        "objective": "restricted optimum after the swap",
    },
    "seed_<k>/*_solver.csv": {
        "iteration": "solver iteration, 0-based",
        "objective": "objective value",
        "grad_norm": "gradient norm or proximal fixed-point residual",
    },
}


def _seed_dir(out: Path, seed: int) -> Path:
    d = out / f"seed_{seed}"
    d.mkdir(parents=True, exist_ok=True)
    return d


# ---------------------------------------------------------------- instances

def equivalence_instance(rng: np.random.Generator, n_max: int = 12, t_max: int = 4, max_group_size: int = 3,
                         ridge: float = 1e-2, lam_range=(0.05, 0.5)):
    """Random least squares over 2..t_max groups with at most ``n_max``
    coordinates; lam is a random fraction of the zero-solution threshold."""
    t = int(rng.integers(2, t_max + 1))
    sizes = [int(s) for s in rng.integers(1, max_group_size + 1, size=t)]
    while sum(sizes) > n_max:
        sizes[int(np.argmax(sizes))] -= 1
    P = GroupPartition.contiguous(sizes)
    n = P.n
    m = 2 * n + 5
    X = rng.normal(size=(m, n)) / np.sqrt(n)
    y = X @ rng.normal(size=n) + 0.1 * rng.normal(size=m)
    obj = LeastSquaresObjective(X, y, P, ridge=ridge)
    tau, _ = tau_threshold(obj)
    lam = float(rng.uniform(*lam_range)) * tau
    return obj, lam


def unique_min_instance(seed: int, groups: int = 3, group_size: int = 2, samples: int = 12,
                        ridge: float = 1e-2, lam_range=(0.9, 1.0), cfg: SolverConfig = SolverConfig(),
                        max_attempts: int = 50):
    """Least squares whose group LASSO solution at lam in ``lam_range * tau``
    has group sparsity exactly 1. The response is driven by one random group
    plus noise; draws are repeated until the sparsity condition holds.

    Returns ``(obj, lam, group_lasso_result, attempts)``.
    """
    P = GroupPartition.contiguous([group_size] * groups)
    for attempt in range(max_attempts):
        rng = stream(seed, "unique_min", str(attempt))
        X = rng.normal(size=(samples, P.n)) / np.sqrt(samples)
        g = int(rng.integers(groups))
        y = 2.0 * X[:, P.index(g)] @ rng.normal(size=group_size) + 0.3 * rng.normal(size=samples)
        obj = LeastSquaresObjective(X, y, P, ridge=ridge)
        tau, _ = tau_threshold(obj)
        lo, hi = lam_range
        lam = float(lo + (hi - lo) * rng.uniform(0.05, 0.95)) * tau
        res = solve_group_lasso(obj, lam, cfg)
        if res.converged and group_sparsity(P, res.beta) == 1:
            return obj, lam, res, attempt + 1
    raise RuntimeError(f"no group-sparsity-1 instance in {max_attempts} attempts for seed {seed}")


def ompr_instance(rng: np.random.Generator, k: int, groups: int = 6, group_size: int = 2, samples: int = 20,
                  noise: float = 0.0):
    """Orthonormal-column design with a planted ``k``-group-sparse signal whose
    entries are bounded away from zero. Returns ``(obj, planted_support, beta)``."""
    P = GroupPartition.contiguous([group_size] * groups)
    if not 0 <= k <= groups:
        raise ValueError(f"cannot plant {k} of {groups} groups")
    if samples < P.n:
        raise ValueError("orthonormal design needs samples >= coordinates")
    Q, _ = np.linalg.qr(rng.normal(size=(samples, P.n)))
    beta = np.zeros(P.n)
    S = sorted(int(i) for i in rng.choice(groups, size=k, replace=False))
    for i in S:
        beta[P.index(i)] = rng.normal(size=group_size) + np.sign(rng.normal(size=group_size))
    y = Q @ beta + noise * rng.normal(size=samples)
    return LeastSquaresObjective(Q, y, P, ridge=0.0), S, beta


# ---------------------------------------------------------------- validation

def _solver(cfg):
    return SolverConfig.from_config(cfg["solver"])


def validate(cfg: dict) -> None:
    """Build every typed sub-config once so that bad values fail before running."""
    kind = cfg["kind"]
    try:
        if "solver" in cfg:
            _solver(cfg)
        if kind == "equivalence":
            bad = set(cfg["mask_kinds"]) - set(MASK_KINDS)
            if bad:
                raise ValueError(f"unknown mask kinds {sorted(bad)}")
            if cfg["instance"]["n_max"] < 2 or cfg["instance"]["t_max"] < 2:
                raise ValueError("instances need n_max >= 2 and t_max >= 2")
        elif kind == "unique_min":
            for q in cfg["q_kinds"]:
                QFunction.from_config(q)
        elif kind == "ompr_recovery":
            inst = cfg["instance"]
            for k in cfg["ks"]:
                if not 1 <= k <= inst["groups"]:
                    raise ValueError(f"k={k} outside [1, {inst['groups']}]")
                OmprConfig.from_config({**cfg["ompr"], "k_prime": k})
        elif kind in ("pruning_compare", "schedule_ablation"):
            TrainConfig.from_config(cfg["train"])
            algos = cfg["algorithms"] if kind == "pruning_compare" else [cfg["algorithm"]]
            bad = set(algos) - set(ALGORITHMS)
            if bad:
                raise ValueError(f"unknown algorithms {sorted(bad)}")
            for s in cfg.get("sparsities", [cfg["train"]["target_sparsity"]]):
                TrainConfig.from_config({**cfg["train"], "target_sparsity": s})
            for c in cfg.get("exponents", []):
                TrainConfig.from_config({**cfg["train"], "sparsify_exponent": c})
            _network_spec(cfg, cfg["task"]["block_size"])
    except (ValueError, TypeError, KeyError) as e:
        raise ConfigError(f"invalid {kind} config: {e}") from e


# ---------------------------------------------------------------- runners

def run_equivalence(cfg: dict, out: Path):
    solver = _solver(cfg)
    per_seed, gaps = {}, {k: [] for k in cfg["mask_kinds"]}
    inst = cfg["instance"]
    for seed in cfg["seeds"]:
        obj, lam = equivalence_instance(stream(seed, "equivalence"), inst["n_max"], inst["t_max"],
                                        inst["max_group_size"], inst["ridge"], tuple(inst["lam_range"]))
        rec = {"n": obj.n, "t": obj.partition.t, "lam": lam}
        for kind in cfg["mask_kinds"]:
            M = MaskedObjective(obj, kind, lam)
            res, _, _ = minimize_masked(M, solver, restarts=cfg["restarts"], seed=seed)
            _, reg = best_regularized(obj, lambda nr: group_penalty(M, nr),
                                      lambda nr: group_penalty_derivative(M, nr), solver, seed=seed)
            gap = abs(res.objective - reg) / max(abs(reg), 1e-12)
            gaps[kind].append(gap)
            rec[kind] = {"masked": res.objective, "regularized": reg, "relative_gap": gap}
        per_seed[str(seed)] = rec
    summary = [{"mask_kind": k, "instances": len(v), "max_relative_gap": max(v),
                "median_relative_gap": float(np.median(v))} for k, v in gaps.items()]
    return per_seed, summary


def run_unique_min(cfg: dict, out: Path):
    solver = _solver(cfg)
    inst = cfg["instance"]
    qs = [QFunction.from_config(q) for q in cfg["q_kinds"]]
    per_seed, passed = {}, {q.label: 0 for q in qs}
    for seed in cfg["seeds"]:
        obj, lam, gl, attempts = unique_min_instance(seed, inst["groups"], inst["group_size"], inst["samples"],
                                                     inst["ridge"], tuple(inst["lam_range"]), solver)
        tau, arg = tau_threshold(obj)
        rec = {"tau": tau, "lam_over_tau": lam / tau, "attempts": attempts,
               "group_lasso_support": sorted(support(obj.partition, gl.beta))}
        for q in qs:
            R = CompositeRegularizer(q, lam, obj.partition)
            res = solve_q_regularized(obj, R, solver)
            v = verify_global_min(obj, R, res.beta, tol=cfg["verify_tol"], seed=seed, inner=solver)
            dist = float(np.linalg.norm(res.beta - gl.beta))
            ok = dist <= cfg["distance_tol"] and v.verified
            passed[q.label] += ok
            rec[q.label] = {"distance": dist, "verified": v.verified, "probe_gap": v.gap, "pass": ok,
                            "message": res.message}
            if q.kind == "lambert" or not ok:
                res.export_trace(_seed_dir(out, seed) / f"{q.kind}_solver.csv")
        per_seed[str(seed)] = rec
    summary = [{"q": label, "instances": len(cfg["seeds"]), "passed": n} for label, n in passed.items()]
    return per_seed, summary


def run_ompr_recovery(cfg: dict, out: Path):
    solver = _solver(cfg)
    inst = cfg["instance"]
    per_seed, rows = {}, []
    stats = {k: {"recovered": 0, "runs": 0, "mismatches": 0} for k in cfg["ks"]}
    for seed in cfg["seeds"]:
        k = cfg["ks"][seed % len(cfg["ks"])]
        obj, S_true, _ = ompr_instance(stream(seed, "ompr"), k, inst["groups"], inst["group_size"],
                                       inst["samples"], inst["noise"])
        oc = OmprConfig.from_config({**cfg["ompr"], "k_prime": k, "seed": seed, "inner": cfg["solver"]})
        state, res = run_ompr(obj, oc)
        state.export_history(_seed_dir(out, seed) / f"k{k}_history.csv")
        objs = [state.initial_objective] + [f for _, _, f in state.history]
        recovered = sorted(state.S) == S_true
        stats[k]["runs"] += 1
        stats[k]["recovered"] += recovered
        stats[k]["mismatches"] += state.selection_mismatches
        per_seed[str(seed)] = {"k": k, "planted": S_true, "found": sorted(state.S), "recovered": recovered,
                               "swaps": len(state.history), "final_loss": res.objective,
                               "strictly_decreasing": all(b < a for a, b in zip(objs, objs[1:])),
                               "selection_mismatches": state.selection_mismatches, "stop": state.message}
    for k, s in stats.items():
        rows.append({"k": k, "runs": s["runs"], "recovered": s["recovered"], "selection_mismatches": s["mismatches"]})
    return per_seed, rows


def _network_spec(cfg, block_size):
    task, net = cfg["task"], cfg["network"]
    return NetworkSpec(input_dim=task["input_dim"], output_dim=task["n_classes"], hidden=tuple(net["hidden"]),
                       block_size=block_size, loss="xent", min_groups=net["min_groups"],
                       fixed_head=net["fixed_head"])


def _teacher(cfg, seed, block_size, sparsity):
    t = dict(cfg["task"])
    t["block_size"] = block_size
    G = math.ceil(t["input_dim"] / block_size) * math.ceil(t["hidden"] / block_size)
    if t.get("n_planted", "auto") == "auto":
        t["n_planted"] = retained_groups(G, sparsity)
    return planted_block_teacher(stream(seed, "data", f"b{block_size}"), **t)


def _train_one(cfg, seed, algo, train_cfg, block_size, out, tag):
    task = _teacher(cfg, seed, block_size, train_cfg.target_sparsity)
    result = train(_network_spec(cfg, block_size), task, algo, train_cfg)
    d = _seed_dir(out, seed)
    result.export_trace(d / f"{tag}_trace.csv")
    result.export_masks(d / f"{tag}_masks.json")
    total = sum(result.final["n_groups"].values())
    # layers below min_groups stay dense, so this can fall short of the target
    realized = 1.0 - sum(result.final["active_groups"].values()) / total if total else 0.0
    return {**result.final, "planted_recovery": planted_recovery(result, task.planted),
            "realized_sparsity": realized, "phases": result.phases}


def run_pruning_compare(cfg: dict, out: Path):
    per_seed, cells = {}, {}
    for seed in cfg["seeds"]:
        rec = {}
        for s in cfg["sparsities"]:
            for B in cfg["block_sizes"]:
                tc = TrainConfig.from_config({**cfg["train"], "target_sparsity": s, "seed": seed})
                for algo in cfg["algorithms"]:
                    tag = f"{algo}_s{s:g}_b{B}"
                    r = _train_one(cfg, seed, algo, tc, B, out, tag)
                    rec[tag] = r
                    cells.setdefault((algo, s, B), []).append(r)
        per_seed[str(seed)] = rec
    summary = [{"algorithm": a, "sparsity": s, "block_size": B,
                "median_eval_loss": float(np.median([r["eval_loss"] for r in rs])),
                "median_planted_recovery": float(np.median([r["planted_recovery"] for r in rs])),
                "median_realized_sparsity": float(np.median([r["realized_sparsity"] for r in rs])),
                "seeds": len(rs)} for (a, s, B), rs in cells.items()]
    return per_seed, summary


def run_schedule_ablation(cfg: dict, out: Path):
    per_seed, cells = {}, {}
    B = cfg["task"]["block_size"]
    for seed in cfg["seeds"]:
        rec = {}
        for c in cfg["exponents"]:
            tc = TrainConfig.from_config({**cfg["train"], "sparsify_exponent": c, "seed": seed})
            tag = f"{cfg['algorithm']}_c{c:g}"
            r = _train_one(cfg, seed, cfg["algorithm"], tc, B, out, tag)
            rec[tag] = r
            cells.setdefault(c, []).append(r)
        per_seed[str(seed)] = rec
    summary = [{"exponent": c, "median_eval_loss": float(np.median([r["eval_loss"] for r in rs])),
                "median_eval_accuracy": float(np.median([r["eval_accuracy"] for r in rs])), "seeds": len(rs)}
               for c, rs in cells.items()]
    return per_seed, summary


RUNNERS = {
    "equivalence": run_equivalence,
    "unique_min": run_unique_min,
    "ompr_recovery": run_ompr_recovery,
    "pruning_compare": run_pruning_compare,
    "schedule_ablation": run_schedule_ablation,
}


def write_summary(rows: list[dict], path: Path) -> None:
    if not rows:
        path.write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
