"""From-scratch LSTM next-step predictor over telemetry, trained with BPTT +
Adam, and the windowed confidence score exp(-E / E_ref) built on top of it.

Parameter tensors, in persistence order:
    W_i, W_f, W_o, W_g : (hidden, input+hidden) gate weights
    b_i, b_f, b_o, b_g : (hidden,) gate biases (forget bias starts at +1)
    W_y, b_y           : (input, hidden), (input,) next-step output map
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

from .plant import CHANNELS, CHANNEL_INDEX
from .pca import Standardizer

PARAM_NAMES = ("W_i", "W_f", "W_o", "W_g", "b_i", "b_f", "b_o", "b_g",
               "W_y", "b_y")


class TrainingDivergence(RuntimeError):
    pass


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass(frozen=True)
class TrainConfig:
    window: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    epochs: int = 30
    clip_norm: float = 5.0
    seed: int = 0
    hidden_dim: int = 32
    calibration_target: float = 0.98
    val_frac: float = 0.2

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("window must be >= 2")
        for name in ("batch_size", "learning_rate", "epochs", "clip_norm",
                     "hidden_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class LSTMModel:
    params: dict                    # name -> ndarray, see PARAM_NAMES
    standardizer: Standardizer
    e_ref: float                    # score scale, > 0
    config: TrainConfig
    channel_order: tuple = CHANNELS

    @property
    def input_dim(self) -> int:
        return self.params["W_y"].shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.params["W_y"].shape[1]

    def _select(self, data: np.ndarray) -> np.ndarray:
        data = np.asarray(data, dtype=float)
        if data.shape[-1] == len(CHANNELS) and self.channel_order != CHANNELS:
            idx = [CHANNEL_INDEX[c] for c in self.channel_order]
            data = data[..., idx]
        return data


def init_params(input_dim: int, hidden_dim: int, rng) -> dict:
    span = 0.08
    params = {}
    for gate in "ifog":
        params[f"W_{gate}"] = rng.uniform(-span, span,
                                          (hidden_dim, input_dim + hidden_dim))
        params[f"b_{gate}"] = np.zeros(hidden_dim)
    params["b_f"] = np.ones(hidden_dim)   # keep early memory alive
    params["W_y"] = rng.uniform(-span, span, (input_dim, hidden_dim))
    params["b_y"] = np.zeros(input_dim)
    return params


def lstm_forward(params: dict, x_seq: np.ndarray):
    """Run the cell over a standardized batch (B, T, D) from zero state.

    Returns (predictions (B, T, D), cache).  Prediction at step t targets
    x_{t+1}; the final prediction has no in-window target.
    """
    x_seq = np.asarray(x_seq, dtype=float)
    squeeze = x_seq.ndim == 2
    if squeeze:
        x_seq = x_seq[None]
    B, T, D = x_seq.shape
    if T < 1:
        raise ValueError("empty sequence")
    H = params["W_i"].shape[0]
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    steps = []
    preds = np.empty((B, T, D))
    for t in range(T):
        cat = np.concatenate([x_seq[:, t], h], axis=1)
        a_i = cat @ params["W_i"].T + params["b_i"]
        a_f = cat @ params["W_f"].T + params["b_f"]
        a_o = cat @ params["W_o"].T + params["b_o"]
        a_g = cat @ params["W_g"].T + params["b_g"]
        i = _sigmoid(a_i)
        f = _sigmoid(a_f)
        o = _sigmoid(a_o)
        g = np.tanh(a_g)
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        if not np.all(np.isfinite(h)):
            raise FloatingPointError(f"non-finite activation at step {t}")
        preds[:, t] = h @ params["W_y"].T + params["b_y"]
        steps.append((cat, i, f, o, g, c, tc, h))
    cache = {"x": x_seq, "steps": steps, "squeeze": squeeze}
    return (preds[0] if squeeze else preds), cache


def sequence_loss(preds: np.ndarray, x_seq: np.ndarray) -> float:
    """Mean squared next-step error: preds[:, :-1] against x_seq[:, 1:]."""
    preds = np.asarray(preds)
    x_seq = np.asarray(x_seq)
    if preds.ndim == 2:
        preds, x_seq = preds[None], x_seq[None]
    err = preds[:, :-1] - x_seq[:, 1:]
    return float(np.mean(err ** 2))


def lstm_backward(params: dict, cache, targets: np.ndarray,
                  clip_norm: Optional[float] = None) -> dict:
    """Exact BPTT gradients of mean squared next-step error.

    `targets` are the shifted inputs x_{1..T-1}; the mean runs over every
    (batch, step, channel) error term.
    """
    x_seq = cache["x"]
    steps = cache["steps"]
    B, T, D = x_seq.shape
    targets = np.asarray(targets, dtype=float)
    if targets.ndim == 2:
        targets = targets[None]
    if targets.shape != (B, T - 1, D):
        raise ValueError(f"targets shape {targets.shape} does not match "
                         f"sequence {(B, T - 1, D)}")
    H = params["W_i"].shape[0]
    grads = {name: np.zeros_like(params[name]) for name in PARAM_NAMES}
    denom = B * (T - 1) * D
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        cat, i, f, o, g, c, tc, h = steps[t]
        dh = dh_next.copy()
        if t < T - 1:
            dy = 2.0 * (h @ params["W_y"].T + params["b_y"] - targets[:, t]) / denom
            grads["W_y"] += dy.T @ h
            grads["b_y"] += dy.sum(axis=0)
            dh += dy @ params["W_y"]
        dc = dc_next + dh * o * (1.0 - tc ** 2)
        do = dh * tc
        di = dc * g
        dg = dc * i
        c_prev = steps[t - 1][5] if t > 0 else np.zeros((B, H))
        df = dc * c_prev
        da_i = di * i * (1.0 - i)
        da_f = df * f * (1.0 - f)
        da_o = do * o * (1.0 - o)
        da_g = dg * (1.0 - g ** 2)
        for name, da in (("i", da_i), ("f", da_f), ("o", da_o), ("g", da_g)):
            grads[f"W_{name}"] += da.T @ cat
            grads[f"b_{name}"] += da.sum(axis=0)
        dcat = (da_i @ params["W_i"] + da_f @ params["W_f"]
                + da_o @ params["W_o"] + da_g @ params["W_g"])
        dh_next = dcat[:, D:]
        dc_next = dc * f
    if clip_norm is not None:
        total = math.sqrt(sum(float(np.sum(g ** 2)) for g in grads.values()))
        if total > clip_norm:
            scale = clip_norm / total
            for name in grads:
                grads[name] *= scale
    return grads


class _Adam:
    def __init__(self, params: dict, lr: float,
                 beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def update(self, params: dict, grads: dict) -> None:
        self.t += 1
        for k in params:
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * grads[k]
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * grads[k] ** 2
            mhat = self.m[k] / (1 - self.b1 ** self.t)
            vhat = self.v[k] / (1 - self.b2 ** self.t)
            params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _windows(data: np.ndarray, starts: np.ndarray, W: int) -> np.ndarray:
    return data[starts[:, None] + np.arange(W)]


def train(frames, cfg: TrainConfig = TrainConfig(),
          channels: Optional[Sequence[str]] = None,
          log: Optional[list] = None) -> LSTMModel:
    """Train a next-step predictor on normal telemetry.

    The last val_frac of the trace is held out; E_ref is calibrated on it so
    the mean validation score hits cfg.calibration_target.  Deterministic
    given cfg.seed.
    """
    channels = tuple(channels) if channels is not None else CHANNELS
    data = np.asarray([f.values if hasattr(f, "values") else f for f in frames],
                      dtype=float)
    if data.shape[-1] == len(CHANNELS) and channels != CHANNELS:
        data = data[:, [CHANNEL_INDEX[c] for c in channels]]
    W = cfg.window
    if data.shape[0] < 20 * W:
        raise ValueError(f"need at least {20 * W} frames, got {data.shape[0]}")

    n_val = max(int(round(cfg.val_frac * data.shape[0])), 5 * W)
    train_data, val_data = data[:-n_val], data[-n_val:]
    standardizer = Standardizer.fit(train_data)
    z_train = standardizer.transform(train_data)
    z_val = standardizer.transform(val_data)

    rng = np.random.default_rng(cfg.seed)
    params = init_params(data.shape[1], cfg.hidden_dim, rng)
    opt = _Adam(params, cfg.learning_rate)

    starts = np.arange(z_train.shape[0] - W + 1)
    val_starts = np.arange(0, z_val.shape[0] - W + 1, W)  # disjoint val windows

    def val_loss():
        preds, _ = lstm_forward(params, _windows(z_val, val_starts, W))
        return sequence_loss(preds, _windows(z_val, val_starts, W))

    initial = val_loss()
    for epoch in range(cfg.epochs):
        order = rng.permutation(starts)
        for lo in range(0, len(order), cfg.batch_size):
            batch = _windows(z_train, order[lo:lo + cfg.batch_size], W)
            preds, cache = lstm_forward(params, batch)
            grads = lstm_backward(params, cache, batch[:, 1:],
                                  clip_norm=cfg.clip_norm)
            opt.update(params, grads)
        v = val_loss()
        if log is not None:
            log.append((epoch, v))
        if v > 10.0 * max(initial, 1e-12):
            raise TrainingDivergence(
                f"validation loss {v:.4g} exceeds 10x initial {initial:.4g} "
                f"at epoch {epoch}")

    model = LSTMModel(params=params, standardizer=standardizer, e_ref=1.0,
                      config=cfg, channel_order=channels)
    model.e_ref = calibrate_score_scale(model, val_data)
    return model


def window_errors(model: LSTMModel, frames) -> np.ndarray:
    """Mean squared next-step error for every length-W window, stride 1.

    Entry j is the error of the window ending just before evaluation point
    W + j; each window is scored from zero hidden state.
    """
    data = model._select(np.asarray(
        [f.values if hasattr(f, "values") else f for f in frames]))
    z = model.standardizer.transform(data)
    W = model.config.window
    if z.shape[0] < W:
        raise ValueError(f"trace shorter than window {W}")
    starts = np.arange(z.shape[0] - W + 1)
    errors = np.empty(len(starts))
    chunk = 512
    for lo in range(0, len(starts), chunk):
        batch = _windows(z, starts[lo:lo + chunk], W)
        preds, _ = lstm_forward(model.params, batch)
        err = preds[:, :-1] - batch[:, 1:]
        errors[lo:lo + chunk] = np.mean(err ** 2, axis=(1, 2))
    return errors


def calibrate_score_scale(model: LSTMModel, frames,
                          target: Optional[float] = None) -> float:
    """Solve for E_ref so mean(exp(-E/E_ref)) over frames hits the target."""
    target = target if target is not None else model.config.calibration_target
    errors = window_errors(model, frames)
    if np.all(errors <= 0.0):
        import warnings
        warnings.warn("all window errors are zero; flooring E_ref")
        return 1e-12
    # mean score is monotone increasing in E_ref; bisect on a log bracket
    lo = max(errors[errors > 0].min(), 1e-300) * 1e-8
    hi = errors.max() * 1e8

    def mean_score(e_ref):
        return float(np.mean(np.exp(-errors / e_ref)))

    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if mean_score(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-6 * lo:
            break
    return math.sqrt(lo * hi)


@dataclass(frozen=True)
class ScoreSeries:
    start: int                     # first evaluation point (= window length)
    scores: np.ndarray             # one score per evaluation point, in (0, 1]

    def __len__(self):
        return len(self.scores)

    def step_of(self, i: int) -> int:
        return self.start + i


def score_window(model: LSTMModel, frames, t: int) -> float:
    """Confidence score exp(-E/E_ref) for the window ending at point t."""
    W = model.config.window
    if t < W:
        raise ValueError(f"evaluation point {t} precedes first window end {W}")
    data = np.asarray([f.values if hasattr(f, "values") else f for f in frames])
    z = model.standardizer.transform(model._select(data[t - W:t]))
    preds, _ = lstm_forward(model.params, z)
    err = float(np.mean((preds[:-1] - z[1:]) ** 2))
    return math.exp(-err / model.e_ref)


def score_trace(model: LSTMModel, frames) -> ScoreSeries:
    """Stride-1 scores over a trace; evaluation points W .. len(frames)-1."""
    errors = window_errors(model, frames)
    W = model.config.window
    n_points = len(frames) - W     # window start s maps to point t = s + W
    scores = np.exp(-errors[:n_points] / model.e_ref)
    return ScoreSeries(start=W, scores=scores)


def save_lstm(model: LSTMModel, path) -> None:
    doc = {
        "input_dim": model.input_dim,
        "hidden_dim": model.hidden_dim,
        "channel_order": list(model.channel_order),
        "weights": {name: model.params[name].ravel().tolist()
                    for name in PARAM_NAMES},
        "standardizer": {"mean": model.standardizer.mean.tolist(),
                         "std": model.standardizer.std.tolist()},
        "e_ref": model.e_ref,
        "train_config": asdict(model.config),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_lstm(path) -> LSTMModel:
    with open(path) as fh:
        doc = json.load(fh)
    D, H = doc["input_dim"], doc["hidden_dim"]
    shapes = {}
    for gate in "ifog":
        shapes[f"W_{gate}"] = (H, D + H)
        shapes[f"b_{gate}"] = (H,)
    shapes["W_y"] = (D, H)
    shapes["b_y"] = (D,)
    params = {name: np.array(doc["weights"][name]).reshape(shapes[name])
              for name in PARAM_NAMES}
    std = np.array(doc["standardizer"]["std"])
    standardizer = Standardizer(mean=np.array(doc["standardizer"]["mean"]),
                                std=std, constant=std <= 1e-9)
    return LSTMModel(params=params, standardizer=standardizer,
                     e_ref=doc["e_ref"],
                     config=TrainConfig(**doc["train_config"]),
                     channel_order=tuple(doc["channel_order"]))
