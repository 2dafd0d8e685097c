"""Training phases and the exponential sparsity schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DENSE = "DENSE"
SPARSIFICATION = "SPARSIFICATION"
SPARSE = "SPARSE"
FINETUNE = "FINETUNE"
PHASE_KINDS = (DENSE, SPARSIFICATION, SPARSE, FINETUNE)
# phases whose mask is frozen at entry
FROZEN = (SPARSE, FINETUNE)


def sparsity_at(t: float, s: float, c: float = 4.0) -> float:
    """``s * (1 - exp(-c t)) / (1 - exp(-c))``: 0 at t=0, s at t=1, concave."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"progress t={t} outside [0, 1]")
    if not 0.0 < s < 1.0:
        raise ValueError(f"target sparsity s={s} outside (0, 1)")
    if not c > 0:
        raise ValueError("exponent constant c must be positive")
    if t == 1.0:
        return s
    return s * math.expm1(-c * t) / math.expm1(-c)


def retained_groups(n_groups: int, sparsity: float) -> int:
    """Number of groups kept at a given sparsity, ``ceil((1 - sparsity) * G)``."""
    # round first so that e.g. (1 - 0.9) * 130 does not ceil to 14
    return int(math.ceil(round((1.0 - sparsity) * n_groups, 9)))


@dataclass(frozen=True)
class Phase:
    kind: str
    start: float
    end: float


@dataclass(frozen=True)
class PhaseSchedule:
    total_steps: int
    phases: tuple[Phase, ...]
    target_sparsity: float
    c: float = 4.0

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")
        if not 0.0 < self.target_sparsity < 1.0:
            raise ValueError("target_sparsity must lie in (0, 1)")
        if not self.c > 0:
            raise ValueError("c must be positive")
        if not self.phases:
            raise ValueError("schedule needs at least one phase")
        edge = 0.0
        for ph in self.phases:
            if ph.kind not in PHASE_KINDS:
                raise ValueError(f"unknown phase kind {ph.kind!r}")
            if not math.isclose(ph.start, edge, abs_tol=1e-12) or not ph.end > ph.start:
                raise ValueError("phases must be contiguous, non-empty and ordered")
            edge = ph.end
        if not math.isclose(edge, 1.0, abs_tol=1e-12):
            raise ValueError("phases must cover [0, 1]")
        steps = self.boundaries()
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError(f"total_steps={self.total_steps} too small for {len(self.phases)} phases")

    def boundaries(self) -> list[int]:
        """Step index where each phase starts, followed by ``total_steps``."""
        return [int(round(ph.start * self.total_steps)) for ph in self.phases] + [self.total_steps]

    def phase_index(self, step: int) -> int:
        if not 0 <= step < self.total_steps:
            raise ValueError(f"step {step} outside [0, {self.total_steps})")
        b = self.boundaries()
        for i in range(len(self.phases)):
            if b[i] <= step < b[i + 1]:
                return i
        raise AssertionError("unreachable")

    def phase_at(self, step: int) -> Phase:
        return self.phases[self.phase_index(step)]

    def phase_steps(self, i: int) -> tuple[int, int]:
        b = self.boundaries()
        return b[i], b[i + 1]

    def progress(self, step: int) -> float:
        """Position within the current phase: 0 at its first step, 1 at its last."""
        i = self.phase_index(step)
        a, b = self.phase_steps(i)
        return 1.0 if b - a == 1 else (step - a) / (b - a - 1)

    def is_boundary(self, step: int) -> bool:
        return step in self.boundaries()[1:-1]

    def sparsity_curve(self) -> np.ndarray:
        """Nominal sparsity of the pruned layers at every step."""
        out = np.zeros(self.total_steps)
        for step in range(self.total_steps):
            kind = self.phase_at(step).kind
            if kind == SPARSIFICATION:
                out[step] = sparsity_at(self.progress(step), self.target_sparsity, self.c)
            elif kind in FROZEN:
                out[step] = self.target_sparsity
        return out

    def to_config(self) -> dict:
        return {"total_steps": self.total_steps, "target_sparsity": self.target_sparsity, "c": self.c,
                "phases": [[p.kind, p.start, p.end] for p in self.phases]}

    @classmethod
    def from_config(cls, spec: dict) -> "PhaseSchedule":
        return cls(int(spec["total_steps"]), tuple(Phase(k, float(a), float(b)) for k, a, b in spec["phases"]),
                   float(spec["target_sparsity"]), float(spec.get("c", 4.0)))


def _layout(kinds_and_weights):
    total = sum(w for _, w in kinds_and_weights)
    phases, edge = [], 0.0
    for kind, w in kinds_and_weights:
        end = edge + w / total
        phases.append(Phase(kind, edge, end))
        edge = end
    last = phases[-1]
    phases[-1] = Phase(last.kind, last.start, 1.0)
    return tuple(phases)


def acdc_schedule(total_steps: int, s: float, cycles: int = 3, dense_frac: float = 0.2,
                  finetune_frac: float = 0.2, c: float = 4.0) -> PhaseSchedule:
    """Initial DENSE, ``cycles`` equal SPARSE/DENSE pairs, final FINETUNE."""
    if cycles < 1:
        raise ValueError("cycles must be at least 1")
    mid = (1.0 - dense_frac - finetune_frac) / (2 * cycles)
    parts = [(DENSE, dense_frac)] + [(k, mid) for _ in range(cycles) for k in (SPARSE, DENSE)]
    return PhaseSchedule(total_steps, _layout(parts + [(FINETUNE, finetune_frac)]), s, c)


def seqattnpp_schedule(total_steps: int, s: float, cycles: int = 3, dense_frac: float = 0.2,
                       finetune_frac: float = 0.2, c: float = 4.0) -> PhaseSchedule:
    """The ACDC layout with every SPARSE phase preceded by a SPARSIFICATION
    phase; the last DENSE phase is replaced by SPARSIFICATION so training
    ends sparse. Each cycle's budget is split evenly among its phases."""
    if cycles < 1:
        raise ValueError("cycles must be at least 1")
    mid = (1.0 - dense_frac - finetune_frac) / cycles
    parts = [(DENSE, dense_frac)]
    for _ in range(cycles - 1):
        parts += [(SPARSIFICATION, mid / 3), (SPARSE, mid / 3), (DENSE, mid / 3)]
    parts.append((SPARSIFICATION, mid))
    return PhaseSchedule(total_steps, _layout(parts + [(FINETUNE, finetune_frac)]), s, c)


def one_shot_schedule(total_steps: int, s: float, finetune_frac: float = 0.2, c: float = 4.0) -> PhaseSchedule:
    """DENSE training, one pruning step, then FINETUNE."""
    return PhaseSchedule(total_steps, _layout([(DENSE, 1.0 - finetune_frac), (FINETUNE, finetune_frac)]), s, c)
