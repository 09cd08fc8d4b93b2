"""Sequential quality predictor: two stacked GRUs and a feed-forward head.

Both GRU layers are warm-started with the mean of a tanh projection of the
input rows, so the initial state ignores order while the recurrences do not.
The embedding ``[h0_T, h1_T]`` feeds a 2d -> 32 -> 16 -> 2 head; unit 0 of
the softmax is the predicted quality.

Inputs pass through a fixed per-feature affine scaler (fitted on the training
rows by ``train``). Everything is float64 numpy with a hand-written backward
pass.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, xlogy

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
EPS = 1e-7
DEFAULT_SCHEDULE = ((40, 0.005), (30, 0.002), (20, 0.001), (10, 0.0005))


class ShapeMismatch(ValueError):
    pass


class EmptyInput(ValueError):
    pass


def scaled_schedule(total_epochs: int, base=DEFAULT_SCHEDULE):
    """Shrink ``base`` to ``total_epochs`` keeping each phase's share and rate."""
    full = sum(e for e, _ in base)
    raw = [e * total_epochs / full for e, _ in base]
    counts = [int(np.floor(r)) for r in raw]
    # hand leftover epochs to the phases with the largest remainders
    for k in sorted(range(len(raw)), key=lambda k: counts[k] - raw[k])[: total_epochs - sum(counts)]:
        counts[k] += 1
    return tuple((c, lr) for c, (_, lr) in zip(counts, base) if c > 0)


@dataclass
class TrainConfig:
    batch_size: int = 128
    schedule: tuple = DEFAULT_SCHEDULE
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float | None = 5.0
    standardize: bool = True  # fit the model's input scaler on the training rows
    seed: int = 0

    @property
    def epochs(self) -> int:
        return sum(e for e, _ in self.schedule)


def _param_shapes(g, d, head):
    h1, h2 = head
    return {
        "proj0.W": (g, d), "proj0.b": (d,),
        "proj1.W": (g, d), "proj1.b": (d,),
        "gru0.Wx": (g, 3 * d), "gru0.Wh": (d, 3 * d), "gru0.bx": (3 * d,), "gru0.bh": (3 * d,),
        "gru1.Wx": (d, 3 * d), "gru1.Wh": (d, 3 * d), "gru1.bx": (3 * d,), "gru1.bh": (3 * d,),
        "head0.W": (2 * d, h1), "head0.b": (h1,),
        "head1.W": (h1, h2), "head1.b": (h2,),
        "head2.W": (h2, 2), "head2.b": (2,),
    }


@dataclass
class OracleModel:
    g: int = 18
    d: int = 32
    head: tuple = (32, 16)
    dropout: float = 0.3
    params: dict = field(default_factory=dict)
    # fixed affine input scaler, not trained by gradient
    input_mean: np.ndarray | None = None
    input_std: np.ndarray | None = None

    def __post_init__(self):
        if self.input_mean is None:
            self.input_mean = np.zeros(self.g)
        if self.input_std is None:
            self.input_std = np.ones(self.g)

    def fit_scaler(self, rows) -> None:
        rows = np.asarray(rows, dtype=float).reshape(-1, self.g)
        sd = rows.std(axis=0)
        self.input_mean = rows.mean(axis=0)
        self.input_std = np.where(sd > 1e-12, sd, 1.0)

    @classmethod
    def init(cls, g=18, d=32, head=(32, 16), dropout=0.3, seed=0) -> "OracleModel":
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(d)
        params = {k: rng.uniform(-bound, bound, size=s) for k, s in _param_shapes(g, d, head).items()}
        return cls(g, d, tuple(head), dropout, params)

    def copy(self) -> "OracleModel":
        return OracleModel(self.g, self.d, self.head, self.dropout, {k: v.copy() for k, v in self.params.items()},
                           self.input_mean.copy(), self.input_std.copy())

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def save(self, path) -> None:
        header = {"format": "jsporacle-weights", "version": FORMAT_VERSION, "g": self.g, "d": self.d,
                  "head": list(self.head), "dropout": self.dropout, "dtype": "float64",
                  "tensors": {k: list(v.shape) for k, v in self.params.items()}}
        with open(path, "wb") as fh:
            np.savez(fh, __header__=np.array(json.dumps(header)),
                     __input_mean__=self.input_mean, __input_std__=self.input_std,
                     **{k: np.ascontiguousarray(v, dtype=np.float64) for k, v in self.params.items()})

    @classmethod
    def load(cls, path) -> "OracleModel":
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["__header__"]))
            if header.get("format") != "jsporacle-weights" or header.get("version") != FORMAT_VERSION:
                raise ValueError(f"{path}: not a supported weight file")
            params = {k: z[k].copy() for k in header["tensors"]}
            mean, std = z["__input_mean__"].copy(), z["__input_std__"].copy()
        model = cls(header["g"], header["d"], tuple(header["head"]), header["dropout"], params, mean, std)
        if mean.shape != (model.g,) or std.shape != (model.g,):
            raise ShapeMismatch(f"input scaler must have {model.g} entries")
        for k, s in _param_shapes(model.g, model.d, model.head).items():
            if params[k].shape != s:
                raise ShapeMismatch(f"{k}: expected {s}, found {params[k].shape}")
        return model


def initial_state(X, W, b, mask=None, return_activations=False):
    """Order-free warm start: mean over rows of ``tanh(X W + b)``."""
    a = np.tanh(X @ W + b)
    s = (a if mask is None else a * mask).mean(axis=-2)
    return (s, a) if return_activations else s


def _gru_forward(X, h, Wx, Wh, bx, bh):
    B, T, _ = X.shape
    d = h.shape[1]
    gx = X @ Wx + bx
    out = np.empty((B, T, d))
    steps = []
    for t in range(T):
        gh = h @ Wh + bh
        r = expit(gx[:, t, :d] + gh[:, :d])
        z = expit(gx[:, t, d:2 * d] + gh[:, d:2 * d])
        n = np.tanh(gx[:, t, 2 * d:] + r * gh[:, 2 * d:])
        steps.append((h, r, z, n, gh[:, 2 * d:]))
        h = (1.0 - z) * n + z * h
        out[:, t] = h
    return out, steps


def _gru_backward(X, dout, steps, Wx, Wh, grads, prefix):
    """``dout[:, t]`` is the loss gradient w.r.t. the output at step t."""
    B, T, _ = X.shape
    d = Wh.shape[0]
    dX = np.empty_like(X)
    dWx = np.zeros_like(Wx)
    dWh = np.zeros_like(Wh)
    dbx = np.zeros(3 * d)
    dbh = np.zeros(3 * d)
    dh = np.zeros((B, d))
    for t in range(T - 1, -1, -1):
        h_prev, r, z, n, ghn = steps[t]
        dh = dh + dout[:, t]
        dn = dh * (1.0 - z)
        dz = dh * (h_prev - n)
        dh_prev = dh * z
        dan = dn * (1.0 - n * n)
        dar = dan * ghn * r * (1.0 - r)
        daz = dz * z * (1.0 - z)
        dgx = np.concatenate([dar, daz, dan], axis=1)
        dgh = np.concatenate([dar, daz, dan * r], axis=1)
        dWx += X[:, t].T @ dgx
        dbx += dgx.sum(axis=0)
        dWh += h_prev.T @ dgh
        dbh += dgh.sum(axis=0)
        dX[:, t] = dgx @ Wx.T
        dh = dh_prev + dgh @ Wh.T
    grads[prefix + ".Wx"] = dWx
    grads[prefix + ".Wh"] = dWh
    grads[prefix + ".bx"] = dbx
    grads[prefix + ".bh"] = dbh
    return dX, dh


def forward(model: OracleModel, X, train: bool = False, rng=None, return_cache: bool = False):
    """Predict for a batch ``X`` of shape (B, T, g) or a single (T, g) sequence.

    Returns ``(y_hat, logits)``; ``y_hat`` is softmax unit 0. In train mode
    dropout masks come from ``rng``.
    """
    X = np.asarray(X, dtype=float)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.ndim != 3 or X.shape[2] != model.g or X.shape[1] == 0:
        raise ShapeMismatch(f"expected (batch, length, {model.g}) input, got {X.shape}")
    X = (X - model.input_mean) / model.input_std
    P = model.params
    B, T, _ = X.shape
    d = model.d
    masks = [None, None, None]
    if train and model.dropout > 0:
        if rng is None:
            raise ValueError("train mode needs an rng for dropout")
        keep = 1.0 - model.dropout
        masks = [(rng.random((B, T, d)) < keep) / keep for _ in range(3)]
    s0, A0 = initial_state(X, P["proj0.W"], P["proj0.b"], masks[0], return_activations=True)
    s1, A1 = initial_state(X, P["proj1.W"], P["proj1.b"], masks[1], return_activations=True)
    H0, steps0 = _gru_forward(X, s0, P["gru0.Wx"], P["gru0.Wh"], P["gru0.bx"], P["gru0.bh"])
    U = H0 if masks[2] is None else H0 * masks[2]
    H1, steps1 = _gru_forward(U, s1, P["gru1.Wx"], P["gru1.Wh"], P["gru1.bx"], P["gru1.bh"])
    emb = np.concatenate([H0[:, -1], H1[:, -1]], axis=1)
    a1 = np.tanh(emb @ P["head0.W"] + P["head0.b"])
    a2 = np.tanh(a1 @ P["head1.W"] + P["head1.b"])
    logits = a2 @ P["head2.W"] + P["head2.b"]
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    q = e / e.sum(axis=1, keepdims=True)
    y_hat = q[:, 0]
    if single:
        y_hat, logits_out = y_hat[0], logits[0]
    else:
        logits_out = logits
    if return_cache:
        cache = dict(X=X, masks=masks, A0=A0, A1=A1, H0=H0, U=U, steps0=steps0, steps1=steps1,
                     emb=emb, a1=a1, a2=a2, q=q)
        return y_hat, logits_out, cache
    return y_hat, logits_out


def kl_loss(q, y) -> float:
    """Mean KL((y, 1-y) || q) over the batch; ``q`` is (B, 2) or unit-0 probabilities."""
    q = np.asarray(q, dtype=float)
    if q.ndim == 1:
        q = np.stack([q, 1.0 - q], axis=1)
    y = np.asarray(y, dtype=float)
    t = np.stack([y, 1.0 - y], axis=1)
    qc = np.clip(q, EPS, 1.0 - EPS)
    return float(np.mean(np.sum(xlogy(t, t) - t * np.log(qc), axis=1)))


def loss_and_grads(model: OracleModel, X, y, train: bool = False, rng=None):
    """KL loss of a batch and the gradient of every parameter."""
    _, _, c = forward(model, X, train=train, rng=rng, return_cache=True)
    P = model.params
    X = c["X"]
    B, T, _ = X.shape
    d = model.d
    y = np.asarray(y, dtype=float)
    q = c["q"]
    t = np.stack([y, 1.0 - y], axis=1)
    loss = kl_loss(q, y)
    inside = (q > EPS) & (q < 1.0 - EPS)
    dq = np.where(inside, -t / np.where(inside, q, 1.0), 0.0) / B
    dlogits = q * (dq - (dq * q).sum(axis=1, keepdims=True))

    g = {}
    a1, a2, emb = c["a1"], c["a2"], c["emb"]
    g["head2.W"] = a2.T @ dlogits
    g["head2.b"] = dlogits.sum(axis=0)
    dz2 = (dlogits @ P["head2.W"].T) * (1.0 - a2 * a2)
    g["head1.W"] = a1.T @ dz2
    g["head1.b"] = dz2.sum(axis=0)
    dz1 = (dz2 @ P["head1.W"].T) * (1.0 - a1 * a1)
    g["head0.W"] = emb.T @ dz1
    g["head0.b"] = dz1.sum(axis=0)
    demb = dz1 @ P["head0.W"].T

    dH1 = np.zeros((B, T, d))
    dH1[:, -1] = demb[:, d:]
    dU, ds1 = _gru_backward(c["U"], dH1, c["steps1"], P["gru1.Wx"], P["gru1.Wh"], g, "gru1")
    m2 = c["masks"][2]
    dH0 = dU if m2 is None else dU * m2
    dH0[:, -1] += demb[:, :d]
    _, ds0 = _gru_backward(X, dH0, c["steps0"], P["gru0.Wx"], P["gru0.Wh"], g, "gru0")

    for k, (ds, A, mask) in enumerate(((ds0, c["A0"], c["masks"][0]), (ds1, c["A1"], c["masks"][1]))):
        dA = np.broadcast_to(ds[:, None, :] / T, A.shape)
        if mask is not None:
            dA = dA * mask
        dpre = dA * (1.0 - A * A)
        g[f"proj{k}.W"] = np.einsum("btg,btd->gd", X, dpre)
        g[f"proj{k}.b"] = dpre.sum(axis=(0, 1))
    return loss, g


def predict(model: OracleModel, X, batch_size: int = 1024):
    """Eval-mode ``(y_hat, logits)`` for a (N, T, g) array."""
    X = np.asarray(X, dtype=float)
    ys, ls = [], []
    for lo in range(0, len(X), batch_size):
        yh, lg = forward(model, X[lo:lo + batch_size])
        ys.append(yh)
        ls.append(lg)
    if not ys:
        return np.zeros(0), np.zeros((0, 2))
    return np.concatenate(ys), np.concatenate(ls)


class Adam:
    def __init__(self, params: dict, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, gk in grads.items():
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * gk
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * gk * gk
            params[k] -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_global_norm(grads: dict, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(v * v)) for v in grads.values())))
    if norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


def _batches(lengths, batch_size, rng):
    """Shuffled mini-batches of indices; each batch holds one sequence length."""
    out = []
    for T in sorted(set(lengths)):
        idx = np.flatnonzero(np.asarray(lengths) == T)
        rng.shuffle(idx)
        out.extend(idx[lo:lo + batch_size] for lo in range(0, len(idx), batch_size))
    order = rng.permutation(len(out))
    return [out[k] for k in order]


def _stack(seqs, idx):
    return np.stack([seqs[i] for i in idx])


def evaluate_loss(model, seqs, labels, batch_size=1024) -> float:
    total = 0.0
    for T in sorted({len(s) for s in seqs}):
        idx = [i for i, s in enumerate(seqs) if len(s) == T]
        yh, _ = predict(model, _stack(seqs, idx), batch_size)
        total += kl_loss(yh, np.asarray(labels)[idx]) * len(idx)
    return total / len(seqs)


def predict_sequences(model, seqs, batch_size=1024):
    """Eval-mode predictions for sequences of possibly different lengths."""
    yh = np.zeros(len(seqs))
    logits = np.zeros((len(seqs), 2))
    for T in sorted({len(s) for s in seqs}):
        idx = [i for i, s in enumerate(seqs) if len(s) == T]
        a, b = predict(model, _stack(seqs, idx), batch_size)
        yh[idx] = a
        logits[idx] = b
    return yh, logits


def train(model: OracleModel, train_seqs, train_y, cfg: TrainConfig, test_seqs=None, test_y=None,
          on_epoch=None):
    """Adam over the epoch schedule; returns ``(model, history)``.

    ``history`` has one dict per epoch with the mean training loss and, when
    a test split is given, its loss and WTA(0.05)/WTA(0.07).
    """
    if not len(train_seqs):
        raise EmptyInput("no training sequences")
    rng = np.random.default_rng(cfg.seed)
    if cfg.standardize:
        model.fit_scaler(np.concatenate([np.asarray(s, dtype=float) for s in train_seqs]))
    opt = Adam(model.params, cfg.beta1, cfg.beta2, cfg.adam_eps)
    lengths = [len(s) for s in train_seqs]
    train_y = np.asarray(train_y, dtype=float)
    history = []
    epoch = 0
    for n_epochs, lr in cfg.schedule:
        for _ in range(n_epochs):
            t0 = time.monotonic()
            epoch += 1
            total = 0.0
            for idx in _batches(lengths, cfg.batch_size, rng):
                loss, grads = loss_and_grads(model, _stack(train_seqs, idx), train_y[idx], train=True, rng=rng)
                if cfg.clip_norm is not None:
                    clip_global_norm(grads, cfg.clip_norm)
                opt.step(model.params, grads, lr)
                total += loss * len(idx)
            row = {"epoch": epoch, "lr": lr, "train_loss": total / len(train_seqs)}
            if test_seqs is not None and len(test_seqs):
                yh, _ = predict_sequences(model, test_seqs)
                row["test_loss"] = kl_loss(yh, test_y)
                row["test_wta05"] = wta(yh, test_y, 0.05)
                row["test_wta07"] = wta(yh, test_y, 0.07)
            row["seconds"] = time.monotonic() - t0
            history.append(row)
            log.info("epoch %d %s", epoch, {k: round(v, 4) for k, v in row.items() if k != "epoch"})
            if on_epoch is not None:
                on_epoch(row)
    return model, history


def write_history(history, path) -> None:
    if not history:
        Path(path).write_text("")
        return
    cols = list(dict.fromkeys(k for row in history for k in row))
    lines = ["\t".join(cols)]
    for row in history:
        lines.append("\t".join(repr(row.get(c, "")) for c in cols))
    Path(path).write_text("\n".join(lines) + "\n")


def wta(predictions, labels, tol: float) -> float:
    """Fraction of predictions strictly within ``tol`` of their labels."""
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(labels, dtype=float)
    if p.size == 0:
        raise EmptyInput("no predictions")
    if p.shape != y.shape:
        raise ShapeMismatch("predictions and labels differ in length")
    if tol <= 0:
        raise ValueError("tol must be positive")
    return float(np.mean(np.abs(y - p) < tol))


def binary_report(logits, labels, thresholds=(0.5, 0.6, 0.7, 0.8, 0.9)) -> list[dict]:
    """Classification metrics per threshold.

    Ground truth is ``label > threshold``; the predicted class is the argmax
    of the two logits (unit 0 = positive). Metrics that are undefined for a
    degenerate split are ``None``.
    """
    logits = np.asarray(logits, dtype=float)
    y = np.asarray(labels, dtype=float)
    if len(y) == 0:
        raise EmptyInput("no labels")
    pred = logits[:, 0] > logits[:, 1]
    rows = []
    for thr in thresholds:
        if not 0.0 < thr < 1.0:
            raise ValueError("thresholds must lie in (0, 1)")
        truth = y > thr
        pos = int(truth.sum())
        neg = int(len(y) - pos)
        tp = int((pred & truth).sum())
        tn = int((~pred & ~truth).sum())
        fp = int((pred & ~truth).sum())
        recall = tp / pos if pos else None
        specificity = tn / neg if neg else None
        rows.append({
            "threshold": thr,
            "positives": pos,
            "negatives": neg,
            "imbalance_ratio": neg / pos if pos else None,
            "accuracy": (tp + tn) / len(y),
            "balanced_accuracy": (recall + specificity) / 2 if pos and neg else None,
            "precision": tp / (tp + fp) if tp + fp else None,
            "recall": recall,
            "degenerate": not (pos and neg),
        })
    return rows


def format_report(rows) -> str:
    head = f"{'thr':>5} {'pos':>7} {'neg':>7} {'ratio':>6} {'acc%':>6} {'bacc%':>6} {'prec%':>6} {'rec%':>6}"
    lines = [head]

    def pct(v):
        return "   n/a" if v is None else f"{100 * v:6.1f}"

    for r in rows:
        ratio = "   n/a" if r["imbalance_ratio"] is None else f"{r['imbalance_ratio']:6.2f}"
        lines.append(f"{r['threshold']:5.2f} {r['positives']:7d} {r['negatives']:7d} {ratio} "
                     f"{pct(r['accuracy'])} {pct(r['balanced_accuracy'])} {pct(r['precision'])} {pct(r['recall'])}")
    return "\n".join(lines)
