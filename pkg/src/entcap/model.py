"""From-scratch LSTM regressor: forward, backpropagation through time,
Huber loss, Adam, and a versioned text checkpoint format.

Everything is double precision numpy; gradients are hand-derived and
verified against central finite differences in the test suite.

Conventions (also recorded in every checkpoint):

* gate order inside stacked LSTM tensors is ``[i, f, g, o]`` (input gate,
  forget gate, cell candidate, output gate);
* the per-step hidden states are integrated for the head according to
  ``integration``: ``concat`` (default: all T states flattened in time
  order), ``mean``, or ``last``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_FORMAT = "entcap-checkpoint/1"
GATE_ORDER = "ifgo"

#: Parameter tensors in initialization / update / serialization order.
PARAM_KEYS = ("w_x", "w_h", "b", "fc_w", "fc_b", "head_w", "head_b")

INTEGRATION_MODES = ("concat", "mean", "last")


@dataclass
class LstmRegressor:
    """All trainable tensors plus the shape hyperparameters.

    ``params`` maps PARAM_KEYS to float64 arrays:
      w_x (4H, D), w_h (4H, H), b (4H,), fc_w (F, fc_in), fc_b (F,),
      head_w (F,), head_b (1,),
    where fc_in is T*H for ``concat`` integration and H otherwise.
    ``version`` increments on every in-place update; forward caches record
    it so that a stale cache is rejected by :func:`backward`.
    """

    input_dim: int
    hidden_dim: int
    fc_dim: int
    seq_len: int
    integration: str
    params: dict[str, np.ndarray]
    version: int = 0

    def fc_input_dim(self) -> int:
        if self.integration == "concat":
            return self.seq_len * self.hidden_dim
        return self.hidden_dim

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "LstmRegressor":
        return LstmRegressor(
            self.input_dim,
            self.hidden_dim,
            self.fc_dim,
            self.seq_len,
            self.integration,
            {k: v.copy() for k, v in self.params.items()},
            self.version,
        )


def init_model(
    input_dim: int,
    hidden_dim: int,
    fc_dim: int,
    seq_len: int,
    rng: np.random.Generator,
    integration: str = "concat",
) -> LstmRegressor:
    """Fresh model: weight matrices uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]
    (fan_in = the matrix's input width), biases zero except the forget-gate
    bias segment, which starts at 1.0. Draw order follows PARAM_KEYS."""
    for name, value in (
        ("input_dim", input_dim),
        ("hidden_dim", hidden_dim),
        ("fc_dim", fc_dim),
        ("seq_len", seq_len),
    ):
        if value < 1:
            raise ValueError(f"{name} must be >= 1, got {value}")
    if integration not in INTEGRATION_MODES:
        raise ValueError(f"integration must be one of {INTEGRATION_MODES}")
    h = hidden_dim
    fc_in = seq_len * h if integration == "concat" else h

    def uniform(shape: tuple[int, ...], fan_in: int) -> np.ndarray:
        lim = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-lim, lim, size=shape)

    params = {
        "w_x": uniform((4 * h, input_dim), input_dim),
        "w_h": uniform((4 * h, h), h),
        "b": np.zeros(4 * h),
        "fc_w": uniform((fc_dim, fc_in), fc_in),
        "fc_b": np.zeros(fc_dim),
        "head_w": uniform((fc_dim,), fc_dim),
        "head_b": np.zeros(1),
    }
    params["b"][h : 2 * h] = 1.0
    return LstmRegressor(input_dim, hidden_dim, fc_dim, seq_len, integration, params)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


@dataclass
class ForwardCache:
    """Everything BPTT needs from one forward pass (batch-first shapes)."""

    version: int
    x: np.ndarray          # (T, B, D)
    gates: np.ndarray      # (T, 4, B, H) activations in GATE_ORDER
    cell: np.ndarray       # (T, B, H)
    tanh_cell: np.ndarray  # (T, B, H)
    hidden: np.ndarray     # (T + 1, B, H), hidden[0] is the zero initial state
    integrated: np.ndarray # (B, fc_in)
    fc_act: np.ndarray     # (B, F)


def _forward_batch(model: LstmRegressor, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Forward over a (B, T, D) batch; returns ((B,) predictions, cache)."""
    if x.ndim != 3 or x.shape[1] != model.seq_len or x.shape[2] != model.input_dim:
        raise ValueError(
            f"expected features of shape (batch, {model.seq_len}, {model.input_dim}), "
            f"got {x.shape}"
        )
    p = model.params
    t_len, b, h = model.seq_len, x.shape[0], model.hidden_dim
    xt = np.ascontiguousarray(np.swapaxes(x, 0, 1))  # (T, B, D)

    gates = np.empty((t_len, 4, b, h))
    cell = np.empty((t_len, b, h))
    tanh_cell = np.empty((t_len, b, h))
    hidden = np.zeros((t_len + 1, b, h))
    c_prev = np.zeros((b, h))
    for t in range(t_len):
        z = xt[t] @ p["w_x"].T + hidden[t] @ p["w_h"].T + p["b"]
        gi = _sigmoid(z[:, 0 * h : 1 * h])
        gf = _sigmoid(z[:, 1 * h : 2 * h])
        gg = np.tanh(z[:, 2 * h : 3 * h])
        go = _sigmoid(z[:, 3 * h : 4 * h])
        c_prev = gf * c_prev + gi * gg
        tc = np.tanh(c_prev)
        gates[t, 0], gates[t, 1], gates[t, 2], gates[t, 3] = gi, gf, gg, go
        cell[t] = c_prev
        tanh_cell[t] = tc
        hidden[t + 1] = go * tc

    if model.integration == "concat":
        integrated = np.swapaxes(hidden[1:], 0, 1).reshape(b, t_len * h)
    elif model.integration == "mean":
        integrated = hidden[1:].mean(axis=0)
    else:  # last
        integrated = hidden[-1].copy()

    fc_act = np.tanh(integrated @ p["fc_w"].T + p["fc_b"])
    y = fc_act @ p["head_w"] + p["head_b"][0]
    cache = ForwardCache(model.version, xt, gates, cell, tanh_cell, hidden, integrated, fc_act)
    return y, cache


def forward(model: LstmRegressor, features: np.ndarray) -> tuple[float, ForwardCache]:
    """Single-example forward: features (T, D) -> (prediction, cache)."""
    features = np.asarray(features, dtype=np.float64)
    y, cache = _forward_batch(model, features[None, :, :])
    return float(y[0]), cache


def backward(
    model: LstmRegressor, cache: ForwardCache, dloss_dprediction: float | np.ndarray
) -> dict[str, np.ndarray]:
    """Gradients of the scalar loss w.r.t. every parameter tensor.

    ``dloss_dprediction`` is a scalar for a single-example cache or a (B,)
    vector for a batch cache; per-example contributions are summed.
    """
    if cache.version != model.version:
        raise ValueError(
            "stale cache: the model was updated after this forward pass"
        )
    p = model.params
    t_len, _, b, h = cache.gates.shape
    dy = np.atleast_1d(np.asarray(dloss_dprediction, dtype=np.float64))
    if dy.shape != (b,):
        raise ValueError(f"expected dloss of shape ({b},), got {dy.shape}")

    grads = {
        "head_w": cache.fc_act.T @ dy,
        "head_b": np.array([dy.sum()]),
    }
    da = dy[:, None] * p["head_w"][None, :]
    ds = da * (1.0 - cache.fc_act**2)
    grads["fc_w"] = ds.T @ cache.integrated
    grads["fc_b"] = ds.sum(axis=0)
    dintegrated = ds @ p["fc_w"]

    if model.integration == "concat":
        dh_out = np.swapaxes(dintegrated.reshape(b, t_len, h), 0, 1)
    elif model.integration == "mean":
        dh_out = np.broadcast_to(dintegrated / t_len, (t_len, b, h))
    else:  # last
        dh_out = np.zeros((t_len, b, h))
        dh_out[-1] = dintegrated

    dz_all = np.empty((t_len, b, 4 * h))
    dh_next = np.zeros((b, h))
    dc_next = np.zeros((b, h))
    for t in range(t_len - 1, -1, -1):
        gi, gf, gg, go = cache.gates[t]
        tc = cache.tanh_cell[t]
        dh = dh_out[t] + dh_next
        do = dh * tc
        dc = dh * go * (1.0 - tc**2) + dc_next
        di = dc * gg
        dg = dc * gi
        c_prev = cache.cell[t - 1] if t > 0 else 0.0
        df = dc * c_prev
        dz = dz_all[t]
        dz[:, 0 * h : 1 * h] = di * gi * (1.0 - gi)
        dz[:, 1 * h : 2 * h] = df * gf * (1.0 - gf)
        dz[:, 2 * h : 3 * h] = dg * (1.0 - gg**2)
        dz[:, 3 * h : 4 * h] = do * go * (1.0 - go)
        dh_next = dz @ p["w_h"]
        dc_next = dc * gf

    dz_flat = dz_all.reshape(t_len * b, 4 * h)
    grads["w_x"] = dz_flat.T @ cache.x.reshape(t_len * b, -1)
    grads["w_h"] = dz_flat.T @ cache.hidden[:-1].reshape(t_len * b, h)
    grads["b"] = dz_flat.sum(axis=0)
    return grads


def predict_batch(
    model: LstmRegressor, features: np.ndarray, chunk: int = 1024
) -> np.ndarray:
    """Raw (unclamped) predictions for a (B, T, D) feature batch.

    Pure: no parameter mutation. Evaluates in chunks so the transient
    forward cache stays small on large batches. Use :func:`clamp01` for the
    clamped view; metrics are computed on raw outputs.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] == 0:
        return np.zeros(0)
    parts = []
    for start in range(0, features.shape[0], chunk):
        y, _ = _forward_batch(model, features[start : start + chunk])
        parts.append(y)
    return np.concatenate(parts)


def clamp01(predictions: np.ndarray) -> np.ndarray:
    return np.clip(predictions, 0.0, 1.0)


def huber_loss(prediction: float, target: float, delta: float = 1.0) -> tuple[float, float]:
    """(loss, dloss/dprediction) for one example.

    Quadratic for |r| <= delta, linear beyond; both branches meet at
    delta**2 / 2.
    """
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    r = prediction - target
    if abs(r) <= delta:
        return 0.5 * r * r, r
    return delta * (abs(r) - 0.5 * delta), delta * math.copysign(1.0, r)


def _huber_batch(
    predictions: np.ndarray, targets: np.ndarray, delta: float
) -> tuple[float, np.ndarray]:
    """Mean Huber loss over a batch and its gradient w.r.t. each prediction."""
    r = predictions - targets
    small = np.abs(r) <= delta
    losses = np.where(small, 0.5 * r * r, delta * (np.abs(r) - 0.5 * delta))
    grads = np.where(small, r, delta * np.sign(r))
    n = predictions.shape[0]
    return float(losses.mean()), grads / n


@dataclass
class AdamState:
    """Per-tensor moment accumulators plus the shared step counter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_adam(model: LstmRegressor, lr: float = 1e-3) -> AdamState:
    return AdamState(
        lr=lr,
        m={k: np.zeros_like(p) for k, p in model.params.items()},
        v={k: np.zeros_like(p) for k, p in model.params.items()},
    )


def adam_step(
    model: LstmRegressor, grads: dict[str, np.ndarray], adam: AdamState
) -> tuple[LstmRegressor, AdamState]:
    """One bias-corrected Adam update, applied in place to every tensor."""
    adam.step += 1
    t = adam.step
    for key in PARAM_KEYS:
        g = grads[key]
        p = model.params[key]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {key}")
        adam.m[key] = adam.beta1 * adam.m[key] + (1.0 - adam.beta1) * g
        adam.v[key] = adam.beta2 * adam.v[key] + (1.0 - adam.beta2) * g * g
        m_hat = adam.m[key] / (1.0 - adam.beta1**t)
        v_hat = adam.v[key] / (1.0 - adam.beta2**t)
        p -= adam.lr * m_hat / (np.sqrt(v_hat) + adam.eps)
    model.version += 1
    return model, adam


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 1000
    huber_delta: float = 1.0
    lr: float = 1e-3
    hidden_dim: int = 64
    fc_dim: int = 64
    seed: int = 0
    keep_best: bool = True  # checkpoint policy: keep best validation loss
    integration: str = "concat"

    def __post_init__(self):
        for name in ("epochs", "batch_size", "hidden_dim", "fc_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.huber_delta <= 0 or self.lr <= 0:
            raise ValueError("huber_delta and lr must be positive")
        if self.integration not in INTEGRATION_MODES:
            raise ValueError(f"integration must be one of {INTEGRATION_MODES}")


def make_batches(
    features: np.ndarray, targets: np.ndarray, batch_size: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Partition (N, T, D) features and (N,) targets into consecutive batches."""
    n = features.shape[0]
    if targets.shape != (n,):
        raise ValueError(f"targets shape {targets.shape} does not match {n} examples")
    if batch_size > n:
        raise ValueError(f"batch_size {batch_size} exceeds dataset size {n}")
    return [
        (features[i : i + batch_size], targets[i : i + batch_size])
        for i in range(0, n, batch_size)
    ]


def train_epoch(
    model: LstmRegressor,
    adam: AdamState,
    batches: list[tuple[np.ndarray, np.ndarray]],
    config: TrainConfig,
    rng: np.random.Generator,
) -> float:
    """One epoch: visit every batch once in a seeded shuffled order, taking
    one Adam step per batch on the mean Huber loss. Returns the mean of the
    per-batch losses (each measured before its update)."""
    if not batches:
        raise ValueError("batches must be non-empty")
    order = rng.permutation(len(batches))
    losses = []
    for index in order:
        x, targets = batches[index]
        preds, cache = _forward_batch(model, x)
        loss, dpreds = _huber_batch(preds, targets, config.huber_delta)
        grads = backward(model, cache, dpreds)
        adam_step(model, grads, adam)
        losses.append(loss)
    return float(np.mean(losses))


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    train_pc: float
    val_pc: float


def _eval_split(
    model: LstmRegressor, features: np.ndarray, targets: np.ndarray, delta: float
) -> tuple[float, float]:
    from .dataset import CorrelationUndefinedError, pearson

    preds = predict_batch(model, features)
    loss, _ = _huber_batch(preds, targets, delta)
    try:
        pc = pearson(targets, preds)
    except CorrelationUndefinedError:
        pc = float("nan")
    return loss, pc


def fit(
    train_features: np.ndarray,
    train_targets: np.ndarray,
    val_features: np.ndarray,
    val_targets: np.ndarray,
    config: TrainConfig,
    log=None,
) -> tuple[LstmRegressor, list[EpochStats]]:
    """Full training driver.

    Initializes the model from ``config.seed``, partitions the training set
    (in its given order) into ``batch_size`` batches, trains for
    ``config.epochs`` epochs, and evaluates both splits after each epoch.
    Returns the checkpoint with the best validation loss (or the final model
    when ``keep_best`` is off) and the per-epoch history. ``log``, if given,
    is called with each EpochStats as it is produced.

    The validation set drives checkpoint selection; callers wanting an
    untouched final test set should carve it off beforehand and evaluate it
    separately.
    """
    rng = np.random.default_rng(config.seed)
    model = init_model(
        train_features.shape[2],
        config.hidden_dim,
        config.fc_dim,
        train_features.shape[1],
        rng,
        config.integration,
    )
    adam = init_adam(model, config.lr)
    batches = make_batches(train_features, train_targets, config.batch_size)

    history: list[EpochStats] = []
    best_model = model.copy()
    best_val = math.inf
    for epoch in range(1, config.epochs + 1):
        train_loss = train_epoch(model, adam, batches, config, rng)
        val_loss, val_pc = _eval_split(model, val_features, val_targets, config.huber_delta)
        _, train_pc = _eval_split(model, train_features, train_targets, config.huber_delta)
        stats = EpochStats(epoch, train_loss, val_loss, train_pc, val_pc)
        history.append(stats)
        if log is not None:
            log(stats)
        if val_loss < best_val:
            best_val = val_loss
            best_model = model.copy()
    return (best_model if config.keep_best else model), history


# ---------------------------------------------------------------------------
# Checkpoint I/O: a single versioned JSON text document.
# ---------------------------------------------------------------------------


def checkpoint_document(model: LstmRegressor, extra: dict | None = None) -> dict:
    """Self-describing checkpoint: format version, hyperparameters, the
    fixed conventions, caller metadata, and full-precision weights."""
    return {
        "format": CHECKPOINT_FORMAT,
        "model": {
            "input_dim": model.input_dim,
            "hidden_dim": model.hidden_dim,
            "fc_dim": model.fc_dim,
            "seq_len": model.seq_len,
            "integration": model.integration,
        },
        "conventions": {
            "gate_order": GATE_ORDER,
            "flatten_order": "row-major",
        },
        "extra": dict(extra or {}),
        "weights": {k: model.params[k].tolist() for k in PARAM_KEYS},
    }


def save_checkpoint(model: LstmRegressor, path, extra: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(checkpoint_document(model, extra), fh)
        fh.write("\n")


def model_from_document(doc: dict) -> tuple[LstmRegressor, dict]:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(
            f"unsupported checkpoint format {doc.get('format')!r}; "
            f"expected {CHECKPOINT_FORMAT!r}"
        )
    spec = doc["model"]
    params = {k: np.asarray(doc["weights"][k], dtype=np.float64) for k in PARAM_KEYS}
    model = LstmRegressor(
        int(spec["input_dim"]),
        int(spec["hidden_dim"]),
        int(spec["fc_dim"]),
        int(spec["seq_len"]),
        str(spec["integration"]),
        params,
    )
    expected = {
        "w_x": (4 * model.hidden_dim, model.input_dim),
        "w_h": (4 * model.hidden_dim, model.hidden_dim),
        "b": (4 * model.hidden_dim,),
        "fc_w": (model.fc_dim, model.fc_input_dim()),
        "fc_b": (model.fc_dim,),
        "head_w": (model.fc_dim,),
        "head_b": (1,),
    }
    for key, shape in expected.items():
        if params[key].shape != shape:
            raise ValueError(f"weight {key} has shape {params[key].shape}, expected {shape}")
    return model, dict(doc.get("extra", {}))


def load_checkpoint(path) -> tuple[LstmRegressor, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_document(json.load(fh))
