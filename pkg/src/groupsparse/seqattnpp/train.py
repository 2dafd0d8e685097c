"""Phase-scheduled block pruning: SequentialAttention++ and baselines.

Algorithms and the importance score each uses to rank blocks:

``seqattnpp``            attention weights A; DENSE / SPARSIFICATION / SPARSE cycles
``seqattnpp_nosparsify`` attention weights A on the ACDC layout (no gradual pruning)
``acdc``                 block Frobenius norm; alternating DENSE / SPARSE
``magnitude``            block Frobenius norm after dense training, then finetune
``powerprop``            norm of the ||V_b|| V_b block after dense training, then finetune
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..groups import top_k_groups
from ..rng import stream
from .network import Network, NetworkSpec, backward, build_network
from .optim import LearningRate, Optimizer
from .schedule import (
    DENSE,
    FROZEN,
    SPARSIFICATION,
    PhaseSchedule,
    acdc_schedule,
    one_shot_schedule,
    retained_groups,
    seqattnpp_schedule,
    sparsity_at,
)

ALGORITHMS = ("seqattnpp", "seqattnpp_nosparsify", "acdc", "magnitude", "powerprop")
TRACE_COLUMNS = ("step", "phase", "loss", "eval_metric", "active_groups")


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, trace: list):
        super().__init__(f"loss became non-finite at step {step}")
        self.step = step
        self.trace = trace


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 64
    lr: LearningRate = field(default_factory=lambda: LearningRate(1e-2, 1e-3))
    optimizer: str = "adam"
    weight_decay: float = 1e-4
    clip_density_bound: bool = True
    target_sparsity: float = 0.9
    sparsify_exponent: float = 4.0
    cycles: int = 3
    dense_frac: float = 0.2
    finetune_frac: float = 0.2
    eval_every: int = 100
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.lr, LearningRate):
            object.__setattr__(self, "lr", LearningRate.from_config(self.lr))
        if self.steps < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("steps, batch_size and eval_every must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if not 0 < self.target_sparsity < 1:
            raise ValueError("target_sparsity must lie in (0, 1)")

    @classmethod
    def from_config(cls, spec: dict) -> "TrainConfig":
        spec = dict(spec)
        if "lr" in spec:
            spec["lr"] = LearningRate.from_config(spec["lr"])
        return cls(**spec)

    def to_config(self) -> dict:
        out = dict(self.__dict__)
        out["lr"] = {"initial": self.lr.initial, "final": self.lr.final}
        return out


def default_schedule(algo: str, cfg: TrainConfig) -> PhaseSchedule:
    s, c = cfg.target_sparsity, cfg.sparsify_exponent
    if algo == "seqattnpp":
        return seqattnpp_schedule(cfg.steps, s, cfg.cycles, cfg.dense_frac, cfg.finetune_frac, c)
    if algo in ("acdc", "seqattnpp_nosparsify"):
        return acdc_schedule(cfg.steps, s, cfg.cycles, cfg.dense_frac, cfg.finetune_frac, c)
    if algo in ("magnitude", "powerprop"):
        return one_shot_schedule(cfg.steps, s, cfg.finetune_frac, c)
    raise ValueError(f"unknown algorithm {algo!r}; expected one of {ALGORITHMS}")


def _param_kind(algo):
    if algo.startswith("seqattnpp"):
        return "attention"
    return "powerprop" if algo == "powerprop" else "plain"


def importance(layer, algo: str) -> np.ndarray:
    if algo.startswith("seqattnpp"):
        return layer.attention_raw()
    return layer.block_magnitudes()


@dataclass
class TrainResult:
    network: Network
    masks: dict[str, list[int]]
    trace: list[tuple]
    phases: list[dict]
    final: dict

    def export_trace(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for row in self.trace:
                w.writerow(["" if isinstance(v, float) and np.isnan(v) else v for v in row])

    def export_masks(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.masks, indent=2, sort_keys=True) + "\n")


class _Pruner:
    """Mask bookkeeping for the pruned layers of one network."""

    def __init__(self, net: Network, algo: str, schedule: PhaseSchedule):
        self.net, self.algo, self.schedule = net, algo, schedule
        self.layers = [l for l in net.layers if l.pruned]
        self.k = [retained_groups(l.n_groups, schedule.target_sparsity) for l in self.layers]
        self.stored = [np.ones(l.n_groups, dtype=bool) for l in self.layers]

    def _top(self, layer, k, among=None):
        score = importance(layer, self.algo).astype(float)
        if among is not None:
            score = np.where(among, score, -np.inf)
        keep = np.zeros(layer.n_groups, dtype=bool)
        keep[top_k_groups(score, k)] = True
        return keep

    def refresh_stored(self):
        for i, layer in enumerate(self.layers):
            self.stored[i] = self._top(layer, self.k[i])

    def enter(self, kind: str, prev: str | None):
        for i, layer in enumerate(self.layers):
            if kind in (DENSE, SPARSIFICATION):
                if kind == DENSE or prev != SPARSIFICATION:
                    layer.mask[:] = True
            elif prev != SPARSIFICATION:
                # frozen phases take the top-k from the end of the previous phase
                layer.mask[:] = self.stored[i] if prev == DENSE else self._top(layer, self.k[i])

    def sparsify(self, step: int):
        tau = self.schedule.progress(step)
        sp = sparsity_at(tau, self.schedule.target_sparsity, self.schedule.c)
        for i, layer in enumerate(self.layers):
            count = max(retained_groups(layer.n_groups, sp), self.k[i])
            if count < layer.mask.sum():
                layer.mask[:] = self._top(layer, count, among=layer.mask)

    def active(self) -> int:
        return int(sum(l.active_groups() for l in self.layers))


def _flat(net):
    params = {}
    for i, layer in enumerate(net.layers):
        if layer.trainable:
            for name, p in layer.params().items():
                params[(i, name)] = p
    return params


def _decayed_grads(net, grads, wd):
    out = {}
    for i, (layer, g) in enumerate(zip(net.layers, grads)):
        if not layer.trainable:
            continue
        for name, gv in g.items():
            if wd > 0 and name in ("W", "logits"):
                p = layer.params()[name]
                if layer.pruned:
                    m = layer.mask[layer.partition.labels].reshape(p.shape) if name == "W" else layer.mask
                    gv = gv + wd * p * m
                else:
                    gv = gv + wd * p
            out[(i, name)] = gv
    return out


def train(spec: NetworkSpec, task, algo: str, cfg: TrainConfig, schedule: PhaseSchedule | None = None,
          rng: np.random.Generator | None = None) -> TrainResult:
    """Run the full phase-scheduled loop.

    The optimizer is reset at every phase boundary. Weight decay is not
    applied to masked blocks or their logits. During SPARSIFICATION the mask
    keeps the top ``ceil((1 - sparsity(tau)) G)`` blocks among those still
    active, so pruning within the phase is irreversible. At the end every
    pruned layer keeps exactly ``ceil((1 - s) G)`` blocks.
    """
    if algo not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algo!r}; expected one of {ALGORITHMS}")
    schedule = schedule or default_schedule(algo, cfg)
    if not np.isclose(schedule.target_sparsity, cfg.target_sparsity):
        raise ValueError("schedule and config disagree on target sparsity")
    init_rng = rng if rng is not None else stream(cfg.seed, "init")
    batch_rng = stream(cfg.seed, "batches")
    density = 1.0 - cfg.target_sparsity
    net = build_network(spec, _param_kind(algo), init_rng, readout=getattr(task, "readout", None),
                        clip_low=density if cfg.clip_density_bound else None)
    pruner = _Pruner(net, algo, schedule)
    for layer, k in zip(pruner.layers, pruner.k):
        if k > layer.n_groups:
            raise ValueError(f"cannot keep {k} of {layer.n_groups} groups")
    opt = Optimizer(cfg.optimizer)
    params = _flat(net)
    X, y = task.X_train, task.y_train
    m = X.shape[0]
    order, pos = batch_rng.permutation(m), 0
    trace, phases = [], []
    prev_kind = None
    phase_i = -1
    for step in range(cfg.steps):
        i = schedule.phase_index(step)
        kind = schedule.phases[i].kind
        if i != phase_i:
            if phase_i >= 0:
                phases[-1]["active_groups_end"] = pruner.active()
            opt.reset()
            pruner.enter(kind, prev_kind)
            a, b = schedule.phase_steps(i)
            phases.append({"index": i, "kind": kind, "start_step": a, "end_step": b})
            phase_i, prev_kind = i, kind
        if kind == SPARSIFICATION:
            pruner.sparsify(step)
        if pos + cfg.batch_size > m:
            order, pos = batch_rng.permutation(m), 0
        idx = order[pos:pos + cfg.batch_size]
        pos += cfg.batch_size
        loss, grads = backward(net, X[idx], y[idx])
        if not np.isfinite(loss):
            trace.append((step, kind, loss, float("nan"), pruner.active()))
            raise TrainingDiverged(step, trace)
        opt.step(params, _decayed_grads(net, grads, cfg.weight_decay), cfg.lr.at(step, cfg.steps))
        if kind == DENSE:
            pruner.refresh_stored()
        ev = float("nan")
        if (step + 1) % cfg.eval_every == 0 or step == cfg.steps - 1:
            ev = net.evaluate(task.X_test, task.y_test)[0]
        trace.append((step, kind, loss, ev, pruner.active()))
    phases[-1]["active_groups_end"] = pruner.active()

    if kind not in FROZEN and kind != SPARSIFICATION:
        # schedule ended dense: prune once so the model meets the target
        pruner.enter(FROZEN[0], kind)
    eval_loss, eval_acc = net.evaluate(task.X_test, task.y_test)
    masks = {str(j): [int(g) for g in np.flatnonzero(l.mask)]
             for j, l in enumerate(net.layers) if l.pruned}
    final = {"eval_loss": eval_loss, "eval_accuracy": eval_acc, "train_loss_last": trace[-1][2],
             "active_groups": {str(j): l.active_groups() for j, l in enumerate(net.layers) if l.pruned},
             "n_groups": {str(j): l.n_groups for j, l in enumerate(net.layers) if l.pruned}}
    return TrainResult(net, masks, trace, phases, final)


def planted_recovery(result: TrainResult, planted, layer: int = 0) -> float:
    """Fraction of planted blocks kept by the final mask of ``layer``."""
    if not planted:
        return 1.0
    kept = set(result.masks.get(str(layer), []))
    return len(kept & set(planted)) / len(planted)
