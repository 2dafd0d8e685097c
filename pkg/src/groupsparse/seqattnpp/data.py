"""Synthetic block-sparse teacher tasks for pruning experiments."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from ..groups import GroupPartition


@dataclass
class TeacherTask:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    # first-layer teacher kernel (input_dim x hidden) and its block partition
    teacher_kernel: np.ndarray
    partition: GroupPartition
    planted: list[int]
    # fixed hidden -> class readout shared by teacher and student
    readout: np.ndarray

    def ground_truth(self) -> dict:
        return {"planted_blocks": self.planted, "n_groups": self.partition.t,
                "kernel_shape": list(self.teacher_kernel.shape)}


def planted_block_teacher(rng: np.random.Generator, input_dim: int = 64, n_classes: int = 8,
                          hidden: int = 128, block_size: int = 8, n_planted: int = 13,
                          n_train: int = 4096, n_test: int = 2048, logit_scale: float = 4.0,
                          temperature: float = 1.0) -> TeacherTask:
    """Classification data from a one-hidden-layer ReLU teacher whose first
    kernel is nonzero on ``n_planted`` random ``block_size`` blocks.

    Inputs are standard Gaussian. Labels are sampled from the softmax of the
    teacher logits divided by ``temperature`` (``temperature=0`` takes the
    argmax). The readout is returned so a student can share it.
    """
    P = GroupPartition.blocks(input_dim, hidden, block_size)
    if not 0 <= n_planted <= P.t:
        raise ValueError(f"cannot plant {n_planted} of {P.t} blocks")
    if temperature < 0:
        raise ValueError("temperature must be nonnegative")
    planted = sorted(int(i) for i in rng.choice(P.t, size=n_planted, replace=False))
    W = np.zeros(input_dim * hidden)
    for g in planted:
        idx = P.index(g)
        W[idx] = rng.normal(size=idx.size) / np.sqrt(block_size)
    W = W.reshape(input_dim, hidden)
    R = rng.normal(size=(hidden, n_classes)) / np.sqrt(block_size)

    Xtr = rng.normal(size=(n_train, input_dim))
    Xte = rng.normal(size=(n_test, input_dim))
    sd = (np.maximum(Xtr @ W, 0.0) @ R).std()
    # calibrate on the training inputs so train and test share one teacher
    R *= logit_scale / (sd if sd > 0 else 1.0)

    def labels(X):
        logits = np.maximum(X @ W, 0.0) @ R
        if temperature == 0:
            return logits.argmax(axis=1)
        p = softmax(logits / temperature, axis=1)
        u = rng.random(X.shape[0])[:, None]
        return np.minimum((p.cumsum(axis=1) < u).sum(axis=1), n_classes - 1)

    ytr, yte = labels(Xtr), labels(Xte)
    return TeacherTask(Xtr, ytr, Xte, yte, W, P, planted, R)
