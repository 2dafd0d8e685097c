"""Small feed-forward networks with block-masked kernels and hand-written
reverse mode.

A layer computes ``X @ W_eff + b``. For a pruned layer the effective kernel
is built block by block from the stored parameters:

``plain``      W_eff = W * mask
``attention``  W_eff = W * A * mask, A = G * softmax(logits), one logit per block
``powerprop``  W_eff = ||V_b|| V_b * mask per block (``W`` holds V)

Hidden layers use ReLU; the head feeds softmax cross-entropy or squared error.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax

from ..groups import GroupPartition

PARAM_KINDS = ("plain", "attention", "powerprop")
LOSSES = ("xent", "mse")


@dataclass
class PrunableLayer:
    W: np.ndarray
    b: np.ndarray
    partition: GroupPartition | None = None
    param: str = "plain"
    logits: np.ndarray | None = None
    mask: np.ndarray | None = None
    trainable: bool = True
    # attention weights are clipped to [clip_low, 1 / clip_low] when set
    clip_low: float | None = None

    def __post_init__(self):
        if self.param not in PARAM_KINDS:
            raise ValueError(f"unknown parameterization {self.param!r}")
        n_in, n_out = self.W.shape
        if self.b.shape != (n_out,):
            raise ValueError("bias shape does not match kernel")
        if self.partition is None:
            if self.param != "plain":
                raise ValueError(f"{self.param} layers need a block partition")
            return
        if self.partition.n != self.W.size:
            raise ValueError("partition does not cover the kernel")
        t = self.partition.t
        if self.mask is None:
            self.mask = np.ones(t, dtype=bool)
        if self.param == "attention" and self.logits is None:
            self.logits = np.zeros(t)
        if self.logits is not None and self.logits.shape != (t,):
            raise ValueError("one logit per block required")

    @property
    def pruned(self) -> bool:
        return self.partition is not None

    @property
    def n_groups(self) -> int:
        return self.partition.t if self.pruned else 1

    def attention_raw(self) -> np.ndarray:
        z = self.logits - self.logits.max()
        e = np.exp(z)
        return self.n_groups * e / e.sum()

    def attention(self) -> np.ndarray:
        A = self.attention_raw()
        if self.clip_low is not None:
            A = np.clip(A, self.clip_low, 1.0 / self.clip_low)
        return A

    def _block_norms(self, M) -> np.ndarray:
        P = self.partition
        return np.sqrt(np.bincount(P.labels, weights=(M * M).ravel(), minlength=P.t))

    def group_scale(self) -> np.ndarray:
        """Per-entry multiplier on W before masking (kernel-shaped)."""
        P = self.partition
        if self.param == "attention":
            return self.attention()[P.labels].reshape(self.W.shape)
        if self.param == "powerprop":
            return self._block_norms(self.W)[P.labels].reshape(self.W.shape)
        return np.ones_like(self.W)

    def effective_kernel(self) -> np.ndarray:
        if not self.pruned:
            return self.W
        m = self.mask[self.partition.labels].reshape(self.W.shape)
        return self.W * self.group_scale() * m

    def block_magnitudes(self) -> np.ndarray:
        """Frobenius norm of each unmasked effective block."""
        return self._block_norms(self.W * self.group_scale())

    def active_groups(self) -> int:
        return int(self.mask.sum()) if self.pruned else 1

    def forward(self, X) -> np.ndarray:
        return X @ self.effective_kernel() + self.b

    def backward(self, X, dZ) -> tuple[dict, np.ndarray]:
        """Gradients of the layer parameters given dLoss/dOutput, and dLoss/dX."""
        Weff = self.effective_kernel()
        dX = dZ @ Weff.T
        dWeff = X.T @ dZ
        grads = {"b": dZ.sum(axis=0)}
        if not self.pruned:
            grads["W"] = dWeff
            return grads, dX
        P = self.partition
        lab = P.labels
        m = self.mask[lab].reshape(self.W.shape)
        dWm = dWeff * m
        if self.param == "plain":
            grads["W"] = dWm
        elif self.param == "attention":
            A_raw = self.attention_raw()
            A = self.attention()
            grads["W"] = dWm * A[lab].reshape(self.W.shape)
            dA = np.bincount(lab, weights=(dWm * self.W).ravel(), minlength=P.t)
            if self.clip_low is not None:
                dA = dA * ((A_raw >= self.clip_low) & (A_raw <= 1.0 / self.clip_low))
            s = A_raw / self.n_groups
            grads["logits"] = self.n_groups * s * (dA - s @ dA)
        else:
            # d(||V|| V)/dV applied to G: ||V|| G + V <V, G> / ||V||, zero at V = 0
            n = self._block_norms(self.W)
            inner = np.bincount(lab, weights=(self.W * dWm).ravel(), minlength=P.t)
            corr = np.where(n > 0, inner / np.where(n > 0, n, 1.0), 0.0)
            grads["W"] = n[lab].reshape(self.W.shape) * dWm + self.W * corr[lab].reshape(self.W.shape)
        return grads, dX

    def params(self) -> dict:
        out = {"W": self.W, "b": self.b}
        if self.logits is not None:
            out["logits"] = self.logits
        return out


@dataclass
class Network:
    layers: list[PrunableLayer]
    loss: str = "xent"
    _cache: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.W.shape[1] != b.W.shape[0]:
                raise ValueError("consecutive layer shapes do not chain")

    def forward(self, X) -> np.ndarray:
        self._cache = []
        h = np.asarray(X, dtype=float)
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            z = layer.forward(h)
            self._cache.append((h, z))
            h = z if i == last else np.maximum(z, 0.0)
        return h

    def loss_value(self, out, y) -> float:
        if self.loss == "xent":
            logp = log_softmax(out, axis=1)
            return float(-np.mean(logp[np.arange(len(y)), y]))
        r = out - y.reshape(out.shape)
        return float(0.5 * np.mean(np.sum(r * r, axis=1)))

    def evaluate(self, X, y) -> tuple[float, float]:
        """(loss, accuracy) for classification; accuracy is NaN for mse."""
        out = self.forward(X)
        acc = float(np.mean(out.argmax(axis=1) == y)) if self.loss == "xent" else float("nan")
        return self.loss_value(out, y), acc


def backward(net: Network, X, y) -> tuple[float, list[dict]]:
    """Mean loss on the batch and per-layer parameter gradients.

    Masked entries get zero gradient: the mask is treated as a constant.
    """
    out = net.forward(X)
    loss = net.loss_value(out, y)
    m = out.shape[0]
    if net.loss == "xent":
        p = np.exp(log_softmax(out, axis=1))
        p[np.arange(m), y] -= 1.0
        d = p / m
    else:
        d = (out - y.reshape(out.shape)) / m
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        h, z = net._cache[i]
        if i < len(net.layers) - 1:
            d = d * (z > 0)
        grads[i], d = net.layers[i].backward(h, d)
    return loss, grads


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    output_dim: int
    hidden: tuple[int, ...] = ()
    block_size: int = 8
    loss: str = "xent"
    # layers with fewer blocks than this are never pruned
    min_groups: int = 100
    # take the head from the dataset's fixed readout and do not train it
    fixed_head: bool = False

    def __post_init__(self):
        if len(self.hidden) > 3:
            raise ValueError("at most 3 hidden layers are supported")
        if self.block_size < 1:
            raise ValueError("block_size must be positive")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")

    @classmethod
    def from_config(cls, spec: dict) -> "NetworkSpec":
        spec = dict(spec)
        spec["hidden"] = tuple(spec.get("hidden", ()))
        return cls(**spec)

    def to_config(self) -> dict:
        return {"input_dim": self.input_dim, "output_dim": self.output_dim, "hidden": list(self.hidden),
                "block_size": self.block_size, "loss": self.loss, "min_groups": self.min_groups,
                "fixed_head": self.fixed_head}


def build_network(spec: NetworkSpec, param: str, rng: np.random.Generator, readout=None,
                  clip_low: float | None = None) -> Network:
    """He-initialized network; layers with at least ``spec.min_groups`` blocks
    get a partition and the requested parameterization."""
    dims = [spec.input_dim, *spec.hidden, spec.output_dim]
    layers = []
    for i, (a, b) in enumerate(zip(dims, dims[1:])):
        head = i == len(dims) - 2
        if head and spec.fixed_head:
            if readout is None:
                raise ValueError("fixed_head needs a readout from the dataset")
            R = np.array(readout, dtype=float)
            if R.shape != (a, b):
                raise ValueError(f"readout shape {R.shape}, expected {(a, b)}")
            layers.append(PrunableLayer(R, np.zeros(b), trainable=False))
            continue
        W = rng.normal(scale=np.sqrt(2.0 / a), size=(a, b))
        P = GroupPartition.blocks(a, b, spec.block_size)
        if P.t < spec.min_groups:
            layers.append(PrunableLayer(W, np.zeros(b)))
            continue
        if param == "powerprop":
            # start from the same effective kernel: ||V_b|| V_b = W_b
            n = np.sqrt(np.bincount(P.labels, weights=(W * W).ravel(), minlength=P.t))
            W = W / np.sqrt(n)[P.labels].reshape(W.shape)
        layers.append(PrunableLayer(W, np.zeros(b), P, param,
                                    clip_low=clip_low if param == "attention" else None))
    return Network(layers, spec.loss)
