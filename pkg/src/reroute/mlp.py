"""One-hidden-layer perceptron with a sigmoid output, trained by Adam."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import TooSmall

_EPS = 1e-12


@dataclass(frozen=True)
class MlpConfig:
    hidden_nodes: int = 100
    validation_fraction: float = 0.10
    learning_rate: float = 0.001
    max_epochs: int = 200
    batch_size: int = 200
    patience: int = 10
    tol: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.validation_fraction < 0.5:
            raise ValueError("validation_fraction must lie in (0, 0.5)")
        if self.hidden_nodes < 1:
            raise ValueError("hidden_nodes must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MlpWeights:
    w1: np.ndarray  # (inputs, hidden)
    b1: np.ndarray
    w2: np.ndarray  # (hidden,)
    b2: float

    def as_list(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, np.array([self.b2])]

    def logits(self, X: np.ndarray) -> np.ndarray:
        hidden = np.maximum(X @ self.w1 + self.b1, 0.0)
        return hidden @ self.w2 + self.b2

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        p = 1.0 / (1.0 + np.exp(-self.logits(np.asarray(X, dtype=np.float64))))
        return np.clip(p, _EPS, 1.0 - _EPS)

    def to_dict(self) -> dict:
        return {"w1": self.w1.tolist(), "b1": self.b1.tolist(), "w2": self.w2.tolist(), "b2": self.b2}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpWeights":
        return cls(np.asarray(d["w1"], dtype=np.float64), np.asarray(d["b1"], dtype=np.float64),
                   np.asarray(d["w2"], dtype=np.float64), float(d["b2"]))


def init_weights(n_inputs: int, hidden: int, rng: np.random.Generator) -> MlpWeights:
    # Glorot-uniform, as is usual for small relu nets
    lim1 = np.sqrt(6.0 / (n_inputs + hidden))
    lim2 = np.sqrt(6.0 / (hidden + 1))
    return MlpWeights(
        rng.uniform(-lim1, lim1, size=(n_inputs, hidden)),
        rng.uniform(-lim1, lim1, size=hidden),
        rng.uniform(-lim2, lim2, size=hidden),
        float(rng.uniform(-lim2, lim2)),
    )


def loss_and_grad(weights: MlpWeights, X: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Mean binary cross-entropy and its gradient, in ``as_list`` order."""
    n = len(X)
    pre = X @ weights.w1 + weights.b1
    hidden = np.maximum(pre, 0.0)
    z = hidden @ weights.w2 + weights.b2
    # log(1 + e^z) - y z, written to stay finite for large |z|
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    dz = (1.0 / (1.0 + np.exp(-z)) - y) / n
    g_w2 = hidden.T @ dz
    g_b2 = np.array([dz.sum()])
    d_pre = np.outer(dz, weights.w2) * (pre > 0)
    g_w1 = X.T @ d_pre
    g_b1 = d_pre.sum(axis=0)
    return loss, [g_w1, g_b1, g_w2, g_b2]


def _loss(weights: MlpWeights, X: np.ndarray, y: np.ndarray) -> float:
    z = weights.logits(X)
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def fit_mlp_arrays(X: np.ndarray, y: np.ndarray, config: MlpConfig) -> tuple[MlpWeights, dict]:
    """Adam on mini-batches with early stopping on a held-out split.

    Returns the weights with the lowest validation loss and a small
    training log.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(X)
    if n < 10:
        raise TooSmall(f"{n} rows; the perceptron needs at least 10")
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(n)
    n_val = max(1, int(round(config.validation_fraction * n)))
    val, train = perm[:n_val], perm[n_val:]
    Xt, yt, Xv, yv = X[train], y[train], X[val], y[val]

    weights = init_weights(X.shape[1], config.hidden_nodes, rng)
    params = weights.as_list()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    step = 0
    best = (np.inf, [p.copy() for p in params], 0)
    stale = 0
    batch = min(config.batch_size, len(Xt))
    epochs = 0
    for epoch in range(config.max_epochs):
        epochs = epoch + 1
        order = rng.permutation(len(Xt))
        for lo in range(0, len(Xt), batch):
            idx = order[lo:lo + batch]
            cur = MlpWeights(params[0], params[1], params[2], float(params[3][0]))
            _, grads = loss_and_grad(cur, Xt[idx], yt[idx])
            step += 1
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= config.beta1
                mi += (1 - config.beta1) * g
                vi *= config.beta2
                vi += (1 - config.beta2) * g * g
                m_hat = mi / (1 - config.beta1 ** step)
                v_hat = vi / (1 - config.beta2 ** step)
                p -= config.learning_rate * m_hat / (np.sqrt(v_hat) + 1e-8)
        cur = MlpWeights(params[0], params[1], params[2], float(params[3][0]))
        val_loss = _loss(cur, Xv, yv)
        if val_loss < best[0] - config.tol:
            best = (val_loss, [p.copy() for p in params], epochs)
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    p = best[1]
    out = MlpWeights(p[0], p[1], p[2], float(p[3][0]))
    return out, {"epochs": epochs, "best_epoch": best[2], "best_validation_loss": float(best[0])}
