"""From-scratch LSTM + self-attention classifier and its trainer.

The classifier feeds the standardized features to an LSTM as a length-d
sequence of scalars, runs self-attention over the hidden states, mean-pools,
and applies a 3-way dense softmax head. The plain-LSTM variant skips
attention and feeds the last hidden state to the head. Everything is
float64 numpy with analytic reverse-mode gradients.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, ShapeMismatch, TooFewRows
from .features import Scaler
from .ingest import CLASS_ORDER, LabeledTable, ScamLabel, split

GATES = ("i", "f", "o", "c")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    """Row-stabilized softmax (max subtraction leaves the result unchanged)."""
    shifted = scores - scores.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=axis, keepdims=True)


@dataclass
class LstmParams:
    """Gate parameters; w_* are (H,1) input weights for scalar inputs,
    u_* are (H,H) recurrent weights, b_* are (H,) biases."""

    w_i: np.ndarray
    u_i: np.ndarray
    b_i: np.ndarray
    w_f: np.ndarray
    u_f: np.ndarray
    b_f: np.ndarray
    w_o: np.ndarray
    u_o: np.ndarray
    b_o: np.ndarray
    w_c: np.ndarray
    u_c: np.ndarray
    b_c: np.ndarray

    @property
    def hidden(self) -> int:
        return self.b_i.shape[0]

    def __post_init__(self):
        h = self.hidden
        for gate in GATES:
            w, u, b = (getattr(self, f"w_{gate}"), getattr(self, f"u_{gate}"),
                       getattr(self, f"b_{gate}"))
            if w.shape != (h, 1) or u.shape != (h, h) or b.shape != (h,):
                raise ShapeMismatch(
                    f"gate {gate}: w{w.shape} u{u.shape} b{b.shape} inconsistent with H={h}"
                )


@dataclass
class AttentionParams:
    """Query/key/value projections, each (H,H)."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray

    def __post_init__(self):
        if not (self.w_q.shape == self.w_k.shape == self.w_v.shape) or \
                self.w_q.ndim != 2 or self.w_q.shape[0] != self.w_q.shape[1]:
            raise ShapeMismatch("attention projections must be square and same-shaped")


@dataclass
class DenseParams:
    w: np.ndarray  # (3, H)
    b: np.ndarray  # (3,)


@dataclass
class ModelParams:
    """All trainable weights; attention is None for the plain-LSTM variant."""

    lstm: LstmParams
    attention: AttentionParams | None
    dense: DenseParams

    @property
    def hidden(self) -> int:
        return self.lstm.hidden


def named_tensors(params: ModelParams) -> list[tuple[str, np.ndarray]]:
    """Flat (name, array) view over every trainable tensor, fixed order."""
    out = []
    for gate in GATES:
        for kind in ("w", "u", "b"):
            out.append((f"lstm.{kind}_{gate}", getattr(params.lstm, f"{kind}_{gate}")))
    if params.attention is not None:
        for kind in ("w_q", "w_k", "w_v"):
            out.append((f"attention.{kind}", getattr(params.attention, kind)))
    out.append(("dense.w", params.dense.w))
    out.append(("dense.b", params.dense.b))
    return out


def init_params(hidden: int, rng: np.random.Generator, attention: bool = True,
                n_classes: int = 3, scale: float = 0.1) -> ModelParams:
    """Draw every tensor from uniform(-scale, scale), in named_tensors order."""
    def u(*shape):
        return rng.uniform(-scale, scale, size=shape)

    lstm = LstmParams(*[
        arr for gate in GATES
        for arr in (u(hidden, 1), u(hidden, hidden), u(hidden,))
    ])
    att = AttentionParams(u(hidden, hidden), u(hidden, hidden), u(hidden, hidden)) \
        if attention else None
    dense = DenseParams(u(n_classes, hidden), u(n_classes,))
    return ModelParams(lstm, att, dense)


def zeros_like_params(params: ModelParams) -> ModelParams:
    lstm = LstmParams(*[np.zeros_like(getattr(params.lstm, f"{kind}_{g}"))
                        for g in GATES for kind in ("w", "u", "b")])
    att = None
    if params.attention is not None:
        att = AttentionParams(np.zeros_like(params.attention.w_q),
                              np.zeros_like(params.attention.w_k),
                              np.zeros_like(params.attention.w_v))
    dense = DenseParams(np.zeros_like(params.dense.w), np.zeros_like(params.dense.b))
    return ModelParams(lstm, att, dense)


def clone_params(params: ModelParams) -> ModelParams:
    return copy.deepcopy(params)


def params_equal(a: ModelParams, b: ModelParams) -> bool:
    ta, tb = named_tensors(a), named_tensors(b)
    return len(ta) == len(tb) and all(
        na == nb and np.array_equal(va, vb) for (na, va), (nb, vb) in zip(ta, tb)
    )


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------

def _lstm_forward_batch(p: LstmParams, x: np.ndarray) -> tuple[np.ndarray, dict]:
    """x is (B, T) scalars; returns hidden states (B, T, H) plus the cached
    gate/cell trace needed for backprop.

    Cell update: c_t = i_t * c'_t + f_t * c_{t-1}; h_t = o_t * tanh(c_t).
    """
    b, t_len = x.shape
    h = p.hidden
    cache = {name: np.empty((b, t_len, h)) for name in
             ("i", "f", "o", "cbar", "c", "tanh_c", "h")}
    h_prev = np.zeros((b, h))
    c_prev = np.zeros((b, h))
    for t in range(t_len):
        x_t = x[:, t : t + 1]
        gate_i = _sigmoid(x_t @ p.w_i.T + h_prev @ p.u_i.T + p.b_i)
        gate_f = _sigmoid(x_t @ p.w_f.T + h_prev @ p.u_f.T + p.b_f)
        gate_o = _sigmoid(x_t @ p.w_o.T + h_prev @ p.u_o.T + p.b_o)
        cbar = np.tanh(x_t @ p.w_c.T + h_prev @ p.u_c.T + p.b_c)
        c_t = gate_i * cbar + gate_f * c_prev
        tanh_c = np.tanh(c_t)
        h_t = gate_o * tanh_c
        for name, val in (("i", gate_i), ("f", gate_f), ("o", gate_o),
                          ("cbar", cbar), ("c", c_t), ("tanh_c", tanh_c), ("h", h_t)):
            cache[name][:, t] = val
        h_prev, c_prev = h_t, c_t
    cache["x"] = x
    return cache["h"], cache


def _lstm_backward_batch(p: LstmParams, cache: dict, d_y: np.ndarray) -> tuple[LstmParams, None]:
    """Backprop through time; d_y is (B, T, H) upstream gradient on the
    hidden states. Returns gradients shaped like the parameters."""
    x = cache["x"]
    b, t_len = x.shape
    h = p.hidden
    grads = {f"{kind}_{g}": np.zeros_like(getattr(p, f"{kind}_{g}"))
             for g in GATES for kind in ("w", "u", "b")}
    dh_next = np.zeros((b, h))
    dc_next = np.zeros((b, h))
    for t in range(t_len - 1, -1, -1):
        gate_i = cache["i"][:, t]
        gate_f = cache["f"][:, t]
        gate_o = cache["o"][:, t]
        cbar = cache["cbar"][:, t]
        tanh_c = cache["tanh_c"][:, t]
        c_prev = cache["c"][:, t - 1] if t > 0 else np.zeros((b, h))
        h_prev = cache["h"][:, t - 1] if t > 0 else np.zeros((b, h))

        dh = d_y[:, t] + dh_next
        do = dh * tanh_c
        dc = dh * gate_o * (1.0 - tanh_c**2) + dc_next
        di = dc * cbar
        dcbar = dc * gate_i
        df = dc * c_prev
        dc_next = dc * gate_f

        da = {
            "i": di * gate_i * (1.0 - gate_i),
            "f": df * gate_f * (1.0 - gate_f),
            "o": do * gate_o * (1.0 - gate_o),
            "c": dcbar * (1.0 - cbar**2),
        }
        x_t = x[:, t : t + 1]
        dh_next = np.zeros((b, h))
        for g in GATES:
            grads[f"w_{g}"] += da[g].T @ x_t
            grads[f"u_{g}"] += da[g].T @ h_prev
            grads[f"b_{g}"] += da[g].sum(axis=0)
            dh_next += da[g] @ getattr(p, f"u_{g}")
    return LstmParams(**{k: grads[k] for k in
                         [f"{kind}_{g}" for g in GATES for kind in ("w", "u", "b")]}), None


def _attention_forward_batch(att: AttentionParams, y: np.ndarray,
                             scaled: bool = False) -> tuple[np.ndarray, dict]:
    """y is (B, T, H); scores are Q K^T with row softmax. The 1/sqrt(H)
    scaling is off by default and opt-in via ``scaled``."""
    q = y @ att.w_q
    k = y @ att.w_k
    v = y @ att.w_v
    scores = np.einsum("bth,bsh->bts", q, k)
    if scaled:
        scores = scores / math.sqrt(y.shape[-1])
    weights = softmax(scores, axis=-1)
    z = np.einsum("bts,bsh->bth", weights, v)
    return z, {"y": y, "q": q, "k": k, "v": v, "weights": weights, "scaled": scaled}


def _attention_backward_batch(att: AttentionParams, cache: dict,
                              d_z: np.ndarray) -> tuple[AttentionParams, np.ndarray]:
    y, q, k, v, a = cache["y"], cache["q"], cache["k"], cache["v"], cache["weights"]
    d_a = np.einsum("bth,bsh->bts", d_z, v)
    d_v = np.einsum("bts,bth->bsh", a, d_z)
    d_scores = a * (d_a - np.einsum("bts,bts->bt", d_a, a)[:, :, None])
    if cache["scaled"]:
        d_scores = d_scores / math.sqrt(y.shape[-1])
    d_q = np.einsum("bts,bsh->bth", d_scores, k)
    d_k = np.einsum("bts,bth->bsh", d_scores, q)
    grads = AttentionParams(
        w_q=np.einsum("bth,btg->hg", y, d_q),
        w_k=np.einsum("bsh,bsg->hg", y, d_k),
        w_v=np.einsum("bsh,bsg->hg", y, d_v),
    )
    d_y = d_q @ att.w_q.T + d_k @ att.w_k.T + d_v @ att.w_v.T
    return grads, d_y


def lstm_forward(params: LstmParams, sequence: np.ndarray) -> tuple[np.ndarray, dict]:
    """Hidden states (T, H) for one scalar sequence, plus the cell trace."""
    seq = np.asarray(sequence, dtype=np.float64).reshape(-1)
    if seq.size < 1:
        raise ShapeMismatch("sequence must have at least one step")
    y, cache = _lstm_forward_batch(params, seq[None, :])
    trace = {name: cache[name][0] for name in ("i", "f", "o", "cbar", "c", "tanh_c", "h")}
    return y[0], trace


def attention_forward(att: AttentionParams, y: np.ndarray,
                      scaled: bool = False) -> np.ndarray:
    """Self-attention output Z (T, H) for one stack of hidden states."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] < 1:
        raise ShapeMismatch(f"expected (T, H) hidden states, got {y.shape}")
    if y.shape[1] != att.w_q.shape[0]:
        raise ShapeMismatch(f"hidden size {y.shape[1]} != projection size {att.w_q.shape[0]}")
    z, _ = _attention_forward_batch(att, y[None], scaled=scaled)
    return z[0]


def _head_forward(params: ModelParams, x: np.ndarray,
                  scaled: bool = False) -> tuple[np.ndarray, dict]:
    """Full forward for a batch of feature rows x (B, d) up to class
    probabilities (B, 3)."""
    y, lstm_cache = _lstm_forward_batch(params.lstm, x)
    if params.attention is not None:
        z, att_cache = _attention_forward_batch(params.attention, y, scaled=scaled)
        pooled = z.mean(axis=1)
    else:
        att_cache = None
        pooled = y[:, -1]
    logits = pooled @ params.dense.w.T + params.dense.b
    probs = softmax(logits, axis=-1)
    return probs, {"lstm": lstm_cache, "att": att_cache, "pooled": pooled,
                   "probs": probs, "t_len": x.shape[1]}


def model_forward(params: ModelParams, x: np.ndarray, scaled: bool = False) -> np.ndarray:
    """Class probabilities (3,) for one standardized feature vector."""
    row = np.asarray(x, dtype=np.float64).reshape(1, -1)
    probs, _ = _head_forward(params, row, scaled=scaled)
    return probs[0]


def batch_loss(params: ModelParams, rows: np.ndarray, labels: np.ndarray,
               scaled: bool = False) -> float:
    """Mean categorical cross-entropy; forward only."""
    rows = np.asarray(rows, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    probs, _ = _head_forward(params, rows, scaled=scaled)
    picked = probs[np.arange(rows.shape[0]), labels]
    return float(-np.mean(np.log(picked)))


def loss_and_grad(params: ModelParams, rows: np.ndarray, labels: np.ndarray,
                  scaled: bool = False) -> tuple[float, ModelParams]:
    """Mean cross-entropy plus analytic gradients for every tensor,
    backpropagated through the dense head, pooling, attention (softmax
    Jacobian included) and the LSTM recurrence."""
    rows = np.asarray(rows, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    if rows.shape[0] == 0:
        raise TooFewRows("empty batch")
    b = rows.shape[0]
    probs, cache = _head_forward(params, rows, scaled=scaled)
    picked = probs[np.arange(b), labels]
    loss = float(-np.mean(np.log(picked)))

    d_logits = probs.copy()
    d_logits[np.arange(b), labels] -= 1.0
    d_logits /= b

    pooled = cache["pooled"]
    dense_grads = DenseParams(w=d_logits.T @ pooled, b=d_logits.sum(axis=0))
    d_pooled = d_logits @ params.dense.w

    t_len = cache["t_len"]
    if params.attention is not None:
        d_z = np.repeat(d_pooled[:, None, :] / t_len, t_len, axis=1)
        att_grads, d_y = _attention_backward_batch(params.attention, cache["att"], d_z)
    else:
        att_grads = None
        d_y = np.zeros((b, t_len, params.hidden))
        d_y[:, -1] = d_pooled
    lstm_grads, _ = _lstm_backward_batch(params.lstm, cache["lstm"], d_y)
    return loss, ModelParams(lstm_grads, att_grads, dense_grads)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    hidden: int = 32
    seed: int = 0
    optimizer: str = "adam"  # or "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    early_stop_patience: int = 20
    attention: bool = True
    scaled_attention: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.hidden <= 0:
            raise ValueError("learning_rate, batch_size and hidden must be positive")
        if self.epochs < 0 or self.early_stop_patience <= 0:
            raise ValueError("epochs must be >= 0 and patience positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate, "epochs": self.epochs,
            "batch_size": self.batch_size, "hidden": self.hidden, "seed": self.seed,
            "optimizer": self.optimizer, "beta1": self.beta1, "beta2": self.beta2,
            "eps": self.eps, "early_stop_patience": self.early_stop_patience,
            "attention": self.attention, "scaled_attention": self.scaled_attention,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        return cls(**doc)


@dataclass
class TrainedModel:
    params: ModelParams
    config: TrainConfig
    feature_names: list[str]
    scaler: Scaler | None
    train_log: list[tuple[int, float, float]]
    best_epoch: int


class _Adam:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: ModelParams, grads: ModelParams) -> None:
        cfg = self.cfg
        self.t += 1
        for (name, tensor), (_, grad) in zip(named_tensors(params), named_tensors(grads)):
            if name not in self.m:
                self.m[name] = np.zeros_like(tensor)
                self.v[name] = np.zeros_like(tensor)
            m = self.m[name] = cfg.beta1 * self.m[name] + (1 - cfg.beta1) * grad
            v = self.v[name] = cfg.beta2 * self.v[name] + (1 - cfg.beta2) * grad**2
            m_hat = m / (1 - cfg.beta1**self.t)
            v_hat = v / (1 - cfg.beta2**self.t)
            tensor -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)


class _Sgd:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg

    def step(self, params: ModelParams, grads: ModelParams) -> None:
        for (_, tensor), (_, grad) in zip(named_tensors(params), named_tensors(grads)):
            tensor -= self.cfg.learning_rate * grad


def train(train_table: LabeledTable, valid_fraction: float, cfg: TrainConfig,
          scaler: Scaler | None = None) -> TrainedModel:
    """Mini-batch training with seeded init and shuffling; keeps the
    parameters from the epoch with the best validation loss.

    The table must already be standardized; ``scaler`` is carried along
    only so checkpoints can standardize future inputs.
    """
    if train_table.n_rows < 10:
        raise TooFewRows(f"need at least 10 rows to train, got {train_table.n_rows}")
    if not 0.0 <= valid_fraction < 1.0:
        raise ValueError("valid_fraction must lie in [0, 1)")

    if valid_fraction > 0.0:
        fit_part, valid_part = split(train_table, 1.0 - valid_fraction, cfg.seed)
    else:
        fit_part, valid_part = train_table, None

    rng = np.random.default_rng(cfg.seed)
    params = init_params(cfg.hidden, rng, attention=cfg.attention)
    optimizer = _Adam(cfg) if cfg.optimizer == "adam" else _Sgd(cfg)

    x_fit, y_fit = fit_part.rows, fit_part.y
    n = x_fit.shape[0]
    has_valid = valid_part is not None and valid_part.n_rows > 0
    if has_valid:
        x_val, y_val = valid_part.rows, valid_part.y

    best_params = clone_params(params)
    best_valid = math.inf
    best_epoch = 0
    stale = 0
    log: list[tuple[int, float, float]] = []
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = perm[start : start + cfg.batch_size]
            loss, grads = loss_and_grad(params, x_fit[batch], y_fit[batch],
                                        scaled=cfg.scaled_attention)
            optimizer.step(params, grads)
            total += loss * batch.size
        train_loss = total / n
        if has_valid:
            valid_loss = batch_loss(params, x_val, y_val, scaled=cfg.scaled_attention)
        else:
            valid_loss = train_loss
        log.append((epoch, train_loss, valid_loss))
        if valid_loss < best_valid:
            best_valid = valid_loss
            best_params = clone_params(params)
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break
    return TrainedModel(params=best_params, config=cfg,
                        feature_names=list(train_table.feature_names),
                        scaler=scaler, train_log=log, best_epoch=best_epoch)


def predict(model: TrainedModel, table: LabeledTable) -> tuple[list[ScamLabel], np.ndarray]:
    """Argmax labels plus probability rows; ties resolve to the lowest
    class index. The table must be standardized with the model's scaler."""
    if table.n_features != len(model.feature_names):
        raise DimensionMismatch(
            f"table has {table.n_features} columns, model expects {len(model.feature_names)}"
        )
    if table.n_rows == 0:
        return [], np.empty((0, len(CLASS_ORDER)))
    probs, _ = _head_forward(model.params, table.rows,
                             scaled=model.config.scaled_attention)
    codes = probs.argmax(axis=1)
    return [CLASS_ORDER[c] for c in codes], probs


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------

def model_to_dict(model: TrainedModel) -> dict:
    tensors = {name: arr.tolist() for name, arr in named_tensors(model.params)}
    return {
        "kind": "alstm" if model.config.attention else "lstm",
        "config": model.config.to_dict(),
        "scaler": model.scaler.to_dict() if model.scaler is not None else None,
        "feature_names": model.feature_names,
        "tensors": tensors,
        "train_log": [[e, tl, vl] for e, tl, vl in model.train_log],
        "best_epoch": model.best_epoch,
    }


def model_from_dict(doc: dict) -> TrainedModel:
    cfg = TrainConfig.from_dict(doc["config"])
    t = {name: np.asarray(val, dtype=np.float64) for name, val in doc["tensors"].items()}
    lstm = LstmParams(**{f"{kind}_{g}": t[f"lstm.{kind}_{g}"]
                         for g in GATES for kind in ("w", "u", "b")})
    attention = None
    if cfg.attention:
        attention = AttentionParams(t["attention.w_q"], t["attention.w_k"], t["attention.w_v"])
    dense = DenseParams(t["dense.w"], t["dense.b"])
    scaler = Scaler.from_dict(doc["scaler"]) if doc.get("scaler") else None
    return TrainedModel(
        params=ModelParams(lstm, attention, dense),
        config=cfg,
        feature_names=list(doc["feature_names"]),
        scaler=scaler,
        train_log=[(int(e), float(tl), float(vl)) for e, tl, vl in doc["train_log"]],
        best_epoch=int(doc["best_epoch"]),
    )


def save_model(model: TrainedModel, path: Path | str) -> None:
    """Single-JSON checkpoint; floats round-trip exactly through repr."""
    Path(path).write_text(json.dumps(model_to_dict(model), sort_keys=True), encoding="utf-8")


def load_model(path: Path | str) -> TrainedModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
