"""One-hidden-layer network with exact hand-derived gradients.

Everything here is plain numpy in float64. The model is
``f(x) = W2 act(W1 x + b1) + b2`` with parameters packed flat in declared
order (W1, b1, W2, b2). Losses: softmax cross-entropy for d_out >= 2,
logistic for a scalar head. The module powers the per-sample difficulty
metrics: loss, EL2N, loss-gradient norm, the tangent-kernel diagonal
``sum_j ||grad_theta f_j(x)||^2``, and the first-order input-margin
approximation ``|f(x)| / ||grad_x f(x)||_q``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .dataset import LabeledDataset
from .rng import make_rng

ACTIVATIONS = ("tanh", "relu")


@dataclass
class MlpModel:
    d_in: int
    d_hidden: int
    d_out: int
    params: np.ndarray  # flat (W1, b1, W2, b2)
    activation: str = "tanh"

    def __post_init__(self):
        expected = self.n_params(self.d_in, self.d_hidden, self.d_out)
        self.params = np.ascontiguousarray(self.params, dtype=np.float64).ravel()
        if self.params.size != expected:
            raise ValueError(f"params length {self.params.size}, expected {expected}")
        if not np.isfinite(self.params).all():
            raise ValueError("params contain non-finite entries")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")

    @staticmethod
    def n_params(d_in: int, d_hidden: int, d_out: int) -> int:
        return d_hidden * (d_in + 1) + d_out * (d_hidden + 1)

    def unpack(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Views (W1, b1, W2, b2) into the flat parameter vector."""
        h, di, do = self.d_hidden, self.d_in, self.d_out
        ofs = 0
        w1 = self.params[ofs : ofs + h * di].reshape(h, di); ofs += h * di
        b1 = self.params[ofs : ofs + h]; ofs += h
        w2 = self.params[ofs : ofs + do * h].reshape(do, h); ofs += do * h
        b2 = self.params[ofs : ofs + do]
        return w1, b1, w2, b2

    def copy(self) -> "MlpModel":
        return MlpModel(self.d_in, self.d_hidden, self.d_out, self.params.copy(), self.activation)

    def to_json(self) -> str:
        return json.dumps(
            {
                "d_in": self.d_in,
                "d_hidden": self.d_hidden,
                "d_out": self.d_out,
                "activation": self.activation,
                "params": self.params.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "MlpModel":
        obj = json.loads(text)
        return cls(obj["d_in"], obj["d_hidden"], obj["d_out"], np.asarray(obj["params"]), obj["activation"])


def init_mlp(d_in: int, d_hidden: int, d_out: int, activation: str = "tanh", seed: int = 0) -> MlpModel:
    """Centered-uniform init, scale 1/sqrt(fan_in) per layer."""
    rng = make_rng(seed)
    a1 = 1.0 / math.sqrt(d_in)
    a2 = 1.0 / math.sqrt(d_hidden)
    parts = [
        rng.uniform(-a1, a1, size=d_hidden * d_in),
        rng.uniform(-a1, a1, size=d_hidden),
        rng.uniform(-a2, a2, size=d_out * d_hidden),
        rng.uniform(-a2, a2, size=d_out),
    ]
    return MlpModel(d_in, d_hidden, d_out, np.concatenate(parts), activation)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    return np.tanh(z) if kind == "tanh" else np.maximum(z, 0.0)


def _act_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return (z > 0.0).astype(np.float64)


def forward(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Logits W2 act(W1 x + b1) + b2."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != model.d_in:
        raise ValueError(f"input length {x.size}, model expects {model.d_in}")
    w1, b1, w2, b2 = model.unpack()
    return w2 @ _act(w1 @ x + b1, model.activation) + b2


def _canon_target(model: MlpModel, y) -> int:
    """Target as class index; accepts ±1 for binary heads, index or one-hot otherwise."""
    arr = np.asarray(y)
    if model.d_out == 1:
        val = float(arr)
        if val not in (-1.0, 1.0):
            raise ValueError(f"binary head expects y in {{-1,+1}}, got {y}")
        return int(val > 0)
    if arr.ndim == 0:
        idx = int(arr)
    elif arr.size == model.d_out:
        idx = int(np.argmax(arr))
    else:
        raise ValueError(f"target shape {arr.shape} does not fit d_out={model.d_out}")
    if not 0 <= idx < model.d_out:
        raise ValueError(f"class index {idx} out of range for d_out={model.d_out}")
    return idx


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def loss_and_grads(model: MlpModel, x: np.ndarray, y) -> tuple[float, np.ndarray, np.ndarray]:
    """(loss, d loss/d params flat, d loss/d input) for one sample.

    Binary heads (d_out=1) use the logistic loss ln(1+exp(-y f)) with y=±1;
    wider heads use softmax cross-entropy against the class index.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != model.d_in:
        raise ValueError(f"input length {x.size}, model expects {model.d_in}")
    w1, b1, w2, b2 = model.unpack()
    z1 = w1 @ x + b1
    a = _act(z1, model.activation)
    logits = w2 @ a + b2
    target = _canon_target(model, y)
    if model.d_out == 1:
        sign = 1.0 if target == 1 else -1.0
        margin = sign * logits[0]
        loss = math.log1p(math.exp(-abs(margin))) + max(-margin, 0.0)  # stable softplus(-margin)
        dlogits = np.array([_sigmoid(logits[0]) - target])
    else:
        probs = _softmax(logits)
        loss = -math.log(max(probs[target], 1e-300))
        dlogits = probs.copy()
        dlogits[target] -= 1.0
    if not math.isfinite(loss):
        raise FloatingPointError(f"non-finite loss for sample with target {y}")
    dw2 = np.outer(dlogits, a)
    db2 = dlogits
    delta1 = (w2.T @ dlogits) * _act_grad(z1, model.activation)
    dw1 = np.outer(delta1, x)
    db1 = delta1
    grad_params = np.concatenate([dw1.ravel(), db1, dw2.ravel(), db2])
    grad_input = w1.T @ delta1
    return float(loss), grad_params, grad_input


def _sigmoid(v: float) -> float:
    if v >= 0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


def el2n_score(model: MlpModel, x: np.ndarray, y) -> float:
    """L2 norm of (predicted class probabilities - one-hot target).

    Binary heads are read as the two-class distribution (1-sigma, sigma).
    """
    logits = forward(model, x)
    target = _canon_target(model, y)
    if model.d_out == 1:
        p1 = _sigmoid(logits[0])
        probs = np.array([1.0 - p1, p1])
        onehot = np.eye(2)[target]
    else:
        probs = _softmax(logits)
        onehot = np.eye(model.d_out)[target]
    return float(np.linalg.norm(probs - onehot))


def gradnorm_score(model: MlpModel, x: np.ndarray, y) -> float:
    """L2 norm of the loss gradient with respect to the parameters."""
    _, grad_params, _ = loss_and_grads(model, x, y)
    return float(np.linalg.norm(grad_params))


def output_param_grads(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """(d_out, n_params) matrix of output gradients, one backward pass per logit."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != model.d_in:
        raise ValueError(f"input length {x.size}, model expects {model.d_in}")
    w1, b1, w2, b2 = model.unpack()
    z1 = w1 @ x + b1
    a = _act(z1, model.activation)
    ag = _act_grad(z1, model.activation)
    rows = []
    for j in range(model.d_out):
        # backward pass seeded with e_j at the logits
        dw2 = np.zeros((model.d_out, model.d_hidden))
        dw2[j] = a
        db2 = np.zeros(model.d_out)
        db2[j] = 1.0
        delta1 = w2[j] * ag
        dw1 = np.outer(delta1, x)
        rows.append(np.concatenate([dw1.ravel(), delta1, dw2.ravel(), db2]))
    return np.asarray(rows)


def ntk_diag_score(model: MlpModel, x: np.ndarray) -> float:
    """Tangent-kernel diagonal: sum over logits j of ||grad_theta f_j(x)||^2."""
    grads = output_param_grads(model, x)
    return float(np.einsum("jp,jp->", grads, grads))


def margin_approx(model: MlpModel, x: np.ndarray, q_norm=2, squash: bool = False) -> float:
    """First-order distance to the decision boundary, |f(x)| / ||grad_x f(x)||_q.

    Scalar-head models only; q is the dual of the margin's p-norm
    (p=2<->q=2, p=1<->q=inf, p=inf<->q=1). Exact for linear models.
    ``squash=True`` bounds the numerator by passing the logit through a
    sigmoid first, i.e. uses g(x) = 2*sigma(f(x)) - 1 (same zero set) and its
    chain-rule gradient instead of the raw logit.
    """
    if model.d_out != 1:
        raise ValueError("margin approximation needs a scalar (binary) head")
    if q_norm not in (1, 2, math.inf) and q_norm != "inf":
        raise ValueError(f"q_norm must be 1, 2 or inf, got {q_norm}")
    x = np.asarray(x, dtype=np.float64).ravel()
    w1, b1, w2, b2 = model.unpack()
    z1 = w1 @ x + b1
    f = float((w2 @ _act(z1, model.activation) + b2)[0])
    grad_x = w1.T @ (w2[0] * _act_grad(z1, model.activation))
    if squash:
        s = _sigmoid(f)
        numer = abs(2.0 * s - 1.0)
        grad_x = 2.0 * s * (1.0 - s) * grad_x
    else:
        numer = abs(f)
    if numer == 0.0:
        return 0.0
    q = np.inf if q_norm in ("inf", math.inf) else q_norm
    denom = float(np.linalg.norm(grad_x, ord=q))
    if denom == 0.0:
        raise ZeroDivisionError("flat point, margin undefined: input gradient vanishes")
    return numer / denom


# ---------------------------------------------------------------------------
# Training and dataset scoring
# ---------------------------------------------------------------------------

def _batch_param_grad(model: MlpModel, xb: np.ndarray, yb: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean loss and mean parameter gradient over a batch (binary head).

    IEEE overflow to inf/nan is tolerated here on purpose: the caller checks
    the loss for finiteness and reports divergence with the batch index.
    """
    w1, b1, w2, b2 = model.unpack()
    z1 = xb @ w1.T + b1
    a = _act(z1, model.activation)
    logits = a @ w2.T + b2
    if model.d_out == 1:
        margin = yb * logits[:, 0]
        loss = float(np.mean(np.logaddexp(0.0, -margin)))
        dlogits = (_sigmoid_vec(logits[:, 0]) - (yb > 0))[:, None]
    else:
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        probs = e / e.sum(axis=1, keepdims=True)
        idx = yb.astype(int)
        loss = float(np.mean(-np.log(np.clip(probs[np.arange(len(idx)), idx], 1e-300, None))))
        dlogits = probs.copy()
        dlogits[np.arange(len(idx)), idx] -= 1.0
    b = xb.shape[0]
    dlogits = dlogits / b
    dw2 = dlogits.T @ a
    db2 = dlogits.sum(axis=0)
    delta1 = (dlogits @ w2) * _act_grad(z1, model.activation)
    dw1 = delta1.T @ xb
    db1 = delta1.sum(axis=0)
    return loss, np.concatenate([dw1.ravel(), db1, dw2.ravel(), db2])


def _sigmoid_vec(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def train_one_epoch(model: MlpModel, ds: LabeledDataset, lr: float, batch_size: int = 32, seed: int = 0) -> MlpModel:
    """One shuffled pass of mini-batch SGD; returns a new model."""
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1, got {batch_size}")
    rng = make_rng(seed)
    order = rng.permutation(ds.n)
    out = model.copy()
    labels = ds.labels.astype(np.float64)
    for start in range(0, ds.n, batch_size):
        batch = order[start : start + batch_size]
        yb = labels[batch] if out.d_out == 1 else ((ds.labels[batch] + 1) // 2)
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grad = _batch_param_grad(out, ds.features[batch], yb)
        if not math.isfinite(loss):
            raise FloatingPointError(f"training diverged at batch starting {start}")
        out.params = out.params - lr * grad
    return out


def train_epochs(model: MlpModel, ds: LabeledDataset, lr: float, epochs: int, batch_size: int = 32, seed: int = 0) -> MlpModel:
    """Repeated epochs with per-epoch derived shuffle seeds."""
    out = model
    for e in range(epochs):
        out = train_one_epoch(out, ds, lr, batch_size, seed=_epoch_seed(seed, e))
    return out


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence(entropy=seed, spawn_key=(epoch,)).generate_state(1)[0])


def predict_sign(model: MlpModel, features: np.ndarray) -> np.ndarray:
    """±1 predictions for a batch of rows (binary or 2-class head)."""
    w1, b1, w2, b2 = model.unpack()
    a = _act(features @ w1.T + b1, model.activation)
    logits = a @ w2.T + b2
    if model.d_out == 1:
        return np.where(logits[:, 0] >= 0.0, 1, -1)
    return np.where(logits[:, 1] >= logits[:, 0], 1, -1)


def accuracy(model: MlpModel, ds: LabeledDataset) -> float:
    return float(np.mean(predict_sign(model, ds.features) == ds.labels))


def mean_loss(model: MlpModel, ds: LabeledDataset) -> float:
    total = 0.0
    for i in range(ds.n):
        y = int(ds.labels[i]) if model.d_out == 1 else (int(ds.labels[i]) + 1) // 2
        loss, _, _ = loss_and_grads(model, ds.features[i], y)
        total += loss
    return total / ds.n


@dataclass(frozen=True)
class DifficultyScore:
    """Per-sample difficulty metrics under a fixed scoring model."""

    index: int
    label: int
    loss_score: float
    el2n: float
    gradnorm_score: float
    ntk_diag: float
    margin_approx: float  # nan for non-scalar heads or flat points

    def csv_row(self) -> list:
        return [
            self.index,
            self.label,
            repr(self.loss_score),
            repr(self.el2n),
            repr(self.gradnorm_score),
            repr(self.ntk_diag),
            repr(self.margin_approx),
        ]


SCORE_CSV_HEADER = ["index", "label", "loss_score", "el2n", "gradnorm", "ntk_diag", "margin_approx"]


def score_dataset(model: MlpModel, ds: LabeledDataset, squash_logits: bool = False) -> list[DifficultyScore]:
    """All difficulty metrics for every sample.

    ``squash_logits=True`` applies a sigmoid to the scalar logit before the
    margin numerator, bounding |f| by 1 (the gradient-norm-maximization view);
    scores are otherwise computed on raw logits.
    """
    scores = []
    for i in range(ds.n):
        x = ds.features[i]
        y = int(ds.labels[i]) if model.d_out == 1 else (int(ds.labels[i]) + 1) // 2
        loss, grad_params, _ = loss_and_grads(model, x, y)
        margin = math.nan
        if model.d_out == 1:
            try:
                margin = margin_approx(model, x, squash=squash_logits)
            except ZeroDivisionError:
                margin = math.nan
        scores.append(
            DifficultyScore(
                index=i,
                label=int(ds.labels[i]),
                loss_score=loss,
                el2n=el2n_score(model, x, y),
                gradnorm_score=float(np.linalg.norm(grad_params)),
                ntk_diag=ntk_diag_score(model, x),
                margin_approx=margin,
            )
        )
    return scores
