"""LSTM / bidirectional LSTM classifier with hand-written BPTT and Adam.

Everything is float64 numpy. Inputs are batches shaped ``(B, T, D)``; gate
blocks are stacked in the order input, forget, output, candidate.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

N_CLASSES = 2
INPUT_DIM = 24
LN_EPS = 1e-5

ModelParams = dict  # name -> float64 array, see param_names()
GradientBundle = dict


@dataclass
class TrainConfig:
    architecture: str = "lstm"
    hidden: int = 200
    batch_size: int = 32
    epochs: int = 300
    dropout: float = 0.4
    layer_norm: bool = False
    class_weights: bool = False
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    input_dim: int = INPUT_DIM

    def __post_init__(self):
        if self.architecture not in ("lstm", "bilstm"):
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.hidden <= 0:
            raise ValueError("hidden size must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch size and epochs must be >= 1")

    @property
    def directions(self) -> tuple[str, ...]:
        return ("fwd", "bwd") if self.architecture == "bilstm" else ("fwd",)

    @property
    def rep_dim(self) -> int:
        return self.hidden * len(self.directions)


def param_names(config: TrainConfig) -> list[str]:
    names = []
    for d in config.directions:
        names += [f"{d}_Wx", f"{d}_Wh", f"{d}_b"]
    if config.layer_norm:
        names += ["ln_gain", "ln_bias"]
    return names + ["out_W", "out_b"]


def _glorot(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_params(config: TrainConfig, seed: int | None = None) -> ModelParams:
    """Glorot-uniform weights, zero biases except forget-gate biases of 1."""
    rng = np.random.default_rng([config.seed if seed is None else seed, 0])
    H, D = config.hidden, config.input_dim
    params = {}
    for d in config.directions:
        params[f"{d}_Wx"] = _glorot(rng, 4 * H, D)
        params[f"{d}_Wh"] = _glorot(rng, 4 * H, H)
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0
        params[f"{d}_b"] = b
    if config.layer_norm:
        params["ln_gain"] = np.ones(config.rep_dim)
        params["ln_bias"] = np.zeros(config.rep_dim)
    params["out_W"] = _glorot(rng, N_CLASSES, config.rep_dim)
    params["out_b"] = np.zeros(N_CLASSES)
    return params


def sigmoid(z):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _gates(x, h_prev, Wx, Wh, b):
    H = Wh.shape[1]
    z = x @ Wx.T + h_prev @ Wh.T + b
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H:2 * H])
    o = sigmoid(z[..., 2 * H:3 * H])
    g = np.tanh(z[..., 3 * H:])
    return i, f, o, g


def lstm_cell(x, h_prev, c_prev, Wx, Wh, b):
    """One LSTM step; returns ``(h_t, c_t)``."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input to lstm_cell")
    i, f, o, g = _gates(x, h_prev, Wx, Wh, b)
    c = f * c_prev + i * g
    return o * np.tanh(c), c


def _run_direction(X, Wx, Wh, b):
    """Unroll over time; returns final hidden state and per-step cache."""
    B, T, _ = X.shape
    H = Wh.shape[1]
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    steps = []
    for t in range(T):
        i, f, o, g = _gates(X[:, t], h, Wx, Wh, b)
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        steps.append((X[:, t], h, c, i, f, o, g, tc))
        h = o * tc
        c = c_new
    return h, steps


def hidden_sequence(X, Wx, Wh, b) -> np.ndarray:
    """All hidden states ``(B, T, H)`` of one direction over ``X``."""
    _, steps = _run_direction(_as_batch(X), Wx, Wh, b)
    return np.stack([o * tc for *_, o, _g, tc in steps], axis=1)


def _as_batch(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"expected (T, D) or (B, T, D) input, got shape {X.shape}")
    return X


def dropout_mask(rng, shape, rate) -> np.ndarray:
    """Inverted-dropout multiplier: 0 for dropped units, 1/(1-rate) for kept."""
    if rate == 0:
        return np.ones(shape)
    return (rng.random(shape) >= rate) / (1.0 - rate)


def log_softmax(logits):
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def forward(X, params: ModelParams, config: TrainConfig, mode: str = "eval", rng=None, mask=None):
    """Log-probabilities ``(B, 2)`` and the cache needed by :func:`backward`.

    In ``train`` mode a dropout mask is drawn from ``rng`` (an int seed or a
    Generator) unless ``mask`` is given explicitly.
    """
    X = _as_batch(X)
    if X.shape[2] != config.input_dim:
        raise ValueError(f"expected {config.input_dim} features, got {X.shape[2]}")
    cache = {"X": X}
    finals = []
    for d in config.directions:
        seq = X if d == "fwd" else X[:, ::-1]
        h, steps = _run_direction(seq, params[f"{d}_Wx"], params[f"{d}_Wh"], params[f"{d}_b"])
        cache[d] = steps
        finals.append(h)
    rep = np.concatenate(finals, axis=1) if len(finals) > 1 else finals[0]

    if mode == "train":
        if mask is None:
            if not isinstance(rng, np.random.Generator):
                rng = np.random.default_rng(rng)
            mask = dropout_mask(rng, rep.shape, config.dropout)
    elif mode == "eval":
        mask = None
    else:
        raise ValueError(f"unknown mode {mode!r}")
    cache["mask"] = mask
    dropped = rep * mask if mask is not None else rep

    if config.layer_norm:
        mu = dropped.mean(axis=1, keepdims=True)
        var = dropped.var(axis=1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + LN_EPS)
        normed = (dropped - mu) * inv_std
        feat = normed * params["ln_gain"] + params["ln_bias"]
        cache["ln"] = (normed, inv_std)
    else:
        feat = dropped
    cache["feat"] = feat
    logits = feat @ params["out_W"].T + params["out_b"]
    logp = log_softmax(logits)
    cache["logp"] = logp
    return logp, cache


def nll_loss(log_probs, labels, class_weights=None) -> float:
    """Mean of ``-w[label] * log_prob[label]`` over the batch."""
    log_probs = np.atleast_2d(log_probs)
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    w = np.ones(N_CLASSES) if class_weights is None else np.asarray(class_weights, dtype=float)
    picked = log_probs[np.arange(len(labels)), labels]
    return float(np.mean(-w[labels] * picked))


def class_weights(counts, enabled: bool = True) -> np.ndarray:
    """Balanced weights ``N / (2 * N_c)``; all ones when disabled."""
    counts = np.asarray(counts, dtype=float)
    if not enabled:
        return np.ones(N_CLASSES)
    if counts.shape != (N_CLASSES,) or np.any(counts <= 0):
        raise ValueError(f"both classes must be present to weight them, got counts {counts.tolist()}")
    return counts.sum() / (N_CLASSES * counts)


def backward(cache, labels, params: ModelParams, config: TrainConfig, weights=None) -> GradientBundle:
    """Exact gradient of :func:`nll_loss` (batch mean) for every parameter."""
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    logp = cache["logp"]
    B = logp.shape[0]
    w = np.ones(N_CLASSES) if weights is None else np.asarray(weights, dtype=float)
    grads = {}

    dlogits = np.exp(logp)
    dlogits[np.arange(B), labels] -= 1.0
    dlogits *= (w[labels] / B)[:, None]
    grads["out_W"] = dlogits.T @ cache["feat"]
    grads["out_b"] = dlogits.sum(axis=0)
    dfeat = dlogits @ params["out_W"]

    if config.layer_norm:
        normed, inv_std = cache["ln"]
        grads["ln_gain"] = (dfeat * normed).sum(axis=0)
        grads["ln_bias"] = dfeat.sum(axis=0)
        dn = dfeat * params["ln_gain"]
        ddropped = inv_std * (
            dn - dn.mean(axis=1, keepdims=True) - normed * (dn * normed).mean(axis=1, keepdims=True)
        )
    else:
        ddropped = dfeat
    mask = cache["mask"]
    drep = ddropped * mask if mask is not None else ddropped

    H = config.hidden
    for k, d in enumerate(config.directions):
        Wh = params[f"{d}_Wh"]
        dWx = np.zeros_like(params[f"{d}_Wx"])
        dWh = np.zeros_like(Wh)
        db = np.zeros_like(params[f"{d}_b"])
        dh = drep[:, k * H:(k + 1) * H]
        dc = np.zeros_like(dh)
        for x, h_prev, c_prev, i, f, o, g, tc in reversed(cache[d]):
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dz = np.concatenate(
                [di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g * g)], axis=1
            )
            dWx += dz.T @ x
            dWh += dz.T @ h_prev
            db += dz.sum(axis=0)
            dh = dz @ Wh
            dc = dc * f
        grads[f"{d}_Wx"] = dWx
        grads[f"{d}_Wh"] = dWh
        grads[f"{d}_b"] = db
    return grads


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> AdamState:
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)


def adam_step(params: ModelParams, grads: GradientBundle, state: AdamState, config: TrainConfig):
    """Bias-corrected Adam update, applied in place; returns ``(params, state)``."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    for k, g in grads.items():
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[k] -= config.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + config.epsilon)
    return params, state


def train(X, y, config: TrainConfig, history: list | None = None, params: ModelParams | None = None) -> ModelParams:
    """Mini-batch Adam over ``config.epochs`` epochs with a seeded shuffle.

    ``history``, when given, receives the mean training loss of each epoch.
    """
    X = _as_batch(X)
    y = np.asarray(y, dtype=int)
    if len(X) == 0:
        raise ValueError("empty training set")
    counts = np.bincount(y, minlength=N_CLASSES)
    if np.count_nonzero(counts) < N_CLASSES:
        raise ValueError("training set must contain both classes")
    weights = class_weights(counts, config.class_weights)

    params = init_params(config) if params is None else params
    state = AdamState.zeros_like(params)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    drop_rng = np.random.default_rng([config.seed, 2])
    n = len(X)
    for _ in range(config.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            logp, cache = forward(X[idx], params, config, "train", rng=drop_rng)
            total += nll_loss(logp, y[idx], weights) * len(idx)
            grads = backward(cache, y[idx], params, config, weights)
            adam_step(params, grads, state, config)
        if history is not None:
            history.append(total / n)
    return params


def predict(X, params: ModelParams, config: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """Predicted class (ties go to class 0) and probability of agitation."""
    logp, _ = forward(X, params, config, "eval")
    return np.argmax(logp, axis=1), np.exp(logp[:, 1])


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"AGITRISK-CKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(params: ModelParams, config: TrainConfig, path: Path):
    """Header line, JSON config echo, then little-endian float64 arrays."""
    names = param_names(config)
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(config),
        "arrays": [[name, list(params[name].shape)] for name in names],
    }
    blob = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + b"\n")
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in names:
            fh.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())


def load_checkpoint(path: Path) -> tuple[ModelParams, TrainConfig]:
    with open(path, "rb") as fh:
        magic = fh.readline().rstrip(b"\n")
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint")
        (size,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(size))
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        config = TrainConfig(**meta["config"])
        params = {}
        for name, shape in meta["arrays"]:
            count = int(np.prod(shape))
            data = fh.read(8 * count)
            if len(data) != 8 * count:
                raise ValueError(f"{path}: truncated array {name}")
            params[name] = np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)
    return params, config
