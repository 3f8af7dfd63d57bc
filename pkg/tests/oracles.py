"""Brute-force reference implementations used as test oracles."""
import itertools

import numpy as np


def best_two_partition_sse(X) -> float:
    """Minimum within-cluster SSE over every split of X into two non-empty groups."""
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    best = np.inf
    for mask in range(1, 2 ** (n - 1)):
        a = np.array([(mask >> i) & 1 for i in range(n)], dtype=bool)
        sse = sum(((X[g] - X[g].mean(axis=0)) ** 2).sum() for g in (a, ~a) if g.any())
        best = min(best, sse)
    return float(best)


def count_confusion(y_true, y_pred) -> dict:
    c = {"tp": 0, "fp": 0, "fn": 0, "tn": 0}
    for t, p in zip(y_true, y_pred):
        key = ("t" if t == p else "f") + ("p" if p == 1 else "n")
        c[key] += 1
    return c


def per_class_scores(y_true, y_pred, positive: int) -> tuple[float, float, float]:
    tp = sum(1 for t, p in zip(y_true, y_pred) if t == positive and p == positive)
    pred_pos = sum(1 for p in y_pred if p == positive)
    real_pos = sum(1 for t in y_true if t == positive)
    prec = tp / pred_pos if pred_pos else 0.0
    rec = tp / real_pos if real_pos else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return prec, rec, f1


def runs(seq):
    return [len(list(g)) for _, g in itertools.groupby(list(seq))]


def model_gradcheck(cell: str, seed: int, w: int = 4, s: int = 3, batch: int = 2, h: float = 1e-3,
                    dropout_rate: float = 0.25) -> float:
    """Max |analytic - numeric| / max(1, |numeric|) over every parameter of the full objective.

    Analytic gradients come from the float32 tape; the numeric side repeats the
    forward pass in float64 with central differences. Dropout stays active,
    with the mask fixed by reseeding the generator on every evaluation.
    """
    from aisfish import nncore as nn
    from aisfish.model import ModelConfig, forward, init
    from aisfish.train import loss

    cfg = ModelConfig(cell, w, s, dropout_rate=dropout_rate, seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(batch, w, 4))
    y = rng.integers(0, 2, size=batch)
    weights = init(cfg)
    for p in weights.values():  # nonzero centers so their gradient is exercised too
        p.data[...] = rng.uniform(-0.5, 0.5, p.shape)
    # keep the decoder ReLU mostly active; with s=3 an all-dead ReLU would zero
    # every network gradient and make the comparison vacuous
    for name in ("dec.b_h", "dec.W_v"):
        weights[name].data[...] = rng.uniform(0.5, 1.5, weights[name].shape)

    def objective(ws):
        logits, emb = forward(cfg, ws, x, training=True, rng=np.random.default_rng(seed + 1))
        return loss(logits, emb, y, ws["loss.centers"])

    with nn.Tape() as tape:
        out = objective(weights)
        tape.backward(out)
    dead = [k for k, p in weights.items() if not np.any(p.grad)]
    if dead:
        raise AssertionError(f"gradient check is vacuous, zero gradient for {dead}")

    worst = 0.0
    with nn.precision(np.float64):
        ref = {k: nn.Parameter(p.data.astype(np.float64), name=k) for k, p in weights.items()}
        for name, p in ref.items():
            flat = p.data.reshape(-1)
            analytic = weights[name].grad.reshape(-1).astype(np.float64)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = float(objective(ref).data)
                flat[i] = orig - h
                down = float(objective(ref).data)
                flat[i] = orig
                numeric = (up - down) / (2 * h)
                worst = max(worst, abs(analytic[i] - numeric) / max(1.0, abs(numeric)))
    return worst
