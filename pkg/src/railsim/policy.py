"""Feed-forward policy network with hand-written backprop and AdamW."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .features import LAYOUT_VERSION, NormalizationStats

FORMAT_VERSION = 1
HEADS = ("softmax", "linear")
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
WEIGHT_DECAY = 0.001


class PolicyError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


class MlpPolicy:
    """ReLU MLP with either a 3-way softmax head or a linear K-vector head.

    Inputs are standardised with ``input_shift``/``input_scale`` before the
    first layer; the linear head's outputs are multiplied by ``output_scale``.
    """

    def __init__(
        self,
        layer_dims,
        head: str = "softmax",
        seed: int | None = 0,
        weight_decay: float = WEIGHT_DECAY,
        layout_version: int = LAYOUT_VERSION,
    ):
        if head not in HEADS:
            raise PolicyError(f"unknown head {head!r}")
        layer_dims = tuple(int(d) for d in layer_dims)
        if len(layer_dims) < 2 or min(layer_dims) < 1:
            raise PolicyError(f"bad layer dims {layer_dims}")
        if head == "softmax" and layer_dims[-1] != 3:
            raise PolicyError("softmax head must have 3 outputs")
        self.layer_dims = layer_dims
        self.head = head
        self.weight_decay = weight_decay
        self.layout_version = layout_version
        self.input_shift = np.zeros(layer_dims[0])
        self.input_scale = np.ones(layer_dims[0])
        self.output_scale = 1.0
        self.meta = {}

        rng = np.random.default_rng(seed)
        self.weights, self.biases = [], []
        n_layers = len(layer_dims) - 1
        for i, (fan_in, fan_out) in enumerate(zip(layer_dims[:-1], layer_dims[1:])):
            gain = 2.0 if i < n_layers - 1 else 1.0
            self.weights.append(rng.normal(0.0, np.sqrt(gain / fan_in), size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        self.reset_optimizer()

    # -- parameters ----------------------------------------------------------

    @property
    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def reset_optimizer(self):
        self.adam_m = [np.zeros_like(p) for p in self.params]
        self.adam_v = [np.zeros_like(p) for p in self.params]
        self.adam_t = 0

    def copy(self) -> "MlpPolicy":
        other = MlpPolicy.__new__(MlpPolicy)
        other.__dict__.update(self.__dict__)
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        other.input_shift = self.input_shift.copy()
        other.input_scale = self.input_scale.copy()
        other.adam_m = [a.copy() for a in self.adam_m]
        other.adam_v = [a.copy() for a in self.adam_v]
        return other

    def set_standardization(self, x: np.ndarray):
        """Fit input standardisation on a training design matrix."""
        x = np.asarray(x, dtype=float)
        self.input_shift = x.mean(axis=0)
        std = x.std(axis=0)
        self.input_scale = np.where(std > 1e-8, std, 1.0)

    # -- forward / backward ----------------------------------------------------

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.layer_dims[0]:
            raise PolicyError(f"feature length {x.shape[1]} != input dim {self.layer_dims[0]}")
        return x, single

    def _forward(self, x):
        h = (x - self.input_shift) / self.input_scale
        acts = [h]
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = np.maximum(z, 0.0) if i < n - 1 else z
            acts.append(h)
        return acts

    def forward(self, x) -> np.ndarray:
        x, single = self._check(x)
        out = self._forward(x)[-1]
        if self.head == "softmax":
            out = softmax(out)
        else:
            out = out * self.output_scale
        return out[0] if single else out

    def loss_and_grads(self, x, targets, weights=None, mask=None):
        """Mean weighted loss and its gradient w.r.t. every parameter.

        Softmax head: ``targets`` are action ids, loss is cross-entropy.
        Linear head: ``targets`` are in output units; squared error is
        averaged over unmasked components.
        """
        x, _ = self._check(x)
        n = x.shape[0]
        w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
        acts = self._forward(x)
        out = acts[-1]

        if self.head == "softmax":
            a = np.asarray(targets, dtype=np.int64)
            logp = log_softmax(out)
            loss = -(w * logp[np.arange(n), a]).sum() / n
            grad_out = np.exp(logp)
            grad_out[np.arange(n), a] -= 1.0
            grad_out *= (w / n)[:, None]
        else:
            y = np.asarray(targets, dtype=float) / self.output_scale
            msk = np.ones_like(y) if mask is None else np.asarray(mask, dtype=float)
            denom = (w[:, None] * msk).sum()
            if denom <= 0:
                raise TrainingError("every target component is masked")
            resid = (out - y) * msk
            loss = (w[:, None] * resid**2).sum() / denom
            grad_out = 2.0 * w[:, None] * resid / denom

        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss {loss}")

        grads = [None] * (2 * len(self.weights))
        g = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.weights[i].T) * (acts[i] > 0)
        if not all(np.all(np.isfinite(gr)) for gr in grads):
            raise TrainingError("non-finite gradient")
        return float(loss), grads

    def adam_update(self, grads, lr: float):
        b1, b2 = ADAM_BETAS
        self.adam_t += 1
        c1 = 1.0 - b1**self.adam_t
        c2 = 1.0 - b2**self.adam_t
        for p, g, m, v in zip(self.params, grads, self.adam_m, self.adam_v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p *= 1.0 - lr * self.weight_decay
            p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)

    def train_step(self, x, targets, weights=None, lr: float = 1e-3, mask=None) -> float:
        loss, grads = self.loss_and_grads(x, targets, weights, mask)
        self.adam_update(grads, lr)
        return loss


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def forward(policy: MlpPolicy, features) -> np.ndarray:
    values = getattr(features, "values", features)
    return policy.forward(values)


def train_step(policy: MlpPolicy, batch, lr: float) -> float:
    """One weighted AdamW step on ``(features, target, weight)`` triples."""
    batch = list(batch)
    if not batch:
        raise TrainingError("empty batch")
    x = np.stack([getattr(f, "values", f) for f, _, _ in batch])
    targets = np.array([t for _, t, _ in batch])
    weights = np.array([w for _, _, w in batch], dtype=float)
    return policy.train_step(x, targets, weights, lr)


def sample_action(dist, rng: np.random.Generator) -> int:
    """Inverse-CDF draw over actions (0, 1, 2)."""
    dist = np.asarray(dist, dtype=float)
    if dist.shape != (3,) or np.any(dist < 0) or abs(dist.sum() - 1.0) > 1e-9:
        raise PolicyError(f"not a normalized 3-way distribution: {dist}")
    return int(inverse_cdf(dist[None, :], np.array([rng.random()]))[0])


def inverse_cdf(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Vectorised inverse-CDF sampling; ``probs`` is (n, 3), ``u`` is (n,)."""
    c0 = probs[:, 0]
    c1 = c0 + probs[:, 1]
    return (u >= c0).astype(np.int64) + (u >= c1)


def stall_clamp(dist, floor):
    """Raise the advance-one mass to at least ``floor`` and renormalise.

    Works on a single distribution or on an (n, 3) array with per-row floors.
    """
    dist = np.asarray(dist, dtype=float)
    out = dist.copy()
    out[..., 1] = np.maximum(dist[..., 1], floor)
    return out / out.sum(axis=-1, keepdims=True)


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(policy: MlpPolicy, stats: NormalizationStats, path, meta=None) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "layout_version": policy.layout_version,
        "head": policy.head,
        "layer_dims": list(policy.layer_dims),
        "weight_decay": policy.weight_decay,
        "weights": [w.ravel().tolist() for w in policy.weights],
        "biases": [b.tolist() for b in policy.biases],
        "input_shift": policy.input_shift.tolist(),
        "input_scale": policy.input_scale.tolist(),
        "output_scale": policy.output_scale,
        "normalization": stats.to_dict(),
        "meta": dict(meta or {}),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_checkpoint(path, layout_version: int = LAYOUT_VERSION):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc

    try:
        if doc["format_version"] != FORMAT_VERSION:
            raise CheckpointError(f"unsupported format_version {doc['format_version']}")
        if doc["layout_version"] != layout_version:
            raise CheckpointError(
                f"checkpoint layout_version {doc['layout_version']} does not match encoder {layout_version}"
            )
        dims = [int(d) for d in doc["layer_dims"]]
        policy = MlpPolicy(dims, doc["head"], seed=None, weight_decay=doc["weight_decay"],
                           layout_version=doc["layout_version"])
        if len(doc["weights"]) != len(dims) - 1 or len(doc["biases"]) != len(dims) - 1:
            raise CheckpointError("layer count does not match layer_dims")
        for i, (fi, fo) in enumerate(zip(dims[:-1], dims[1:])):
            w = np.array(doc["weights"][i], dtype=float)
            b = np.array(doc["biases"][i], dtype=float)
            if w.size != fi * fo or b.size != fo:
                raise CheckpointError(f"layer {i} parameter size does not match ({fi}, {fo})")
            policy.weights[i] = w.reshape(fi, fo)
            policy.biases[i] = b
        policy.input_shift = np.array(doc["input_shift"], dtype=float)
        policy.input_scale = np.array(doc["input_scale"], dtype=float)
        if policy.input_shift.size != dims[0] or policy.input_scale.size != dims[0]:
            raise CheckpointError("input standardisation size does not match input dim")
        policy.output_scale = float(doc["output_scale"])
        policy.reset_optimizer()
        stats = NormalizationStats.from_dict(doc["normalization"])
        if stats.layout_version != layout_version:
            raise CheckpointError("normalization stats layout_version mismatch")
        policy.meta = doc.get("meta", {})
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    return policy, stats
