import logging
from typing import Any, Dict, Tuple

import numpy as np
from scipy.special import log_softmax, softmax

from .model import Model

logger = logging.getLogger(__name__)

Weights = Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]    # W1, b1, W2, b2


def forward(weights: Weights, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(pre-activation, hidden activation, logits)."""
    W1, b1, W2, b2 = weights
    Z = X @ W1 + b1
    H = np.maximum(Z, 0.0)
    return Z, H, H @ W2 + b2


def loss_and_grads(weights: Weights, X: np.ndarray, Y: np.ndarray, l2: float = 0.0):
    """
    Mean softmax cross-entropy plus 0.5 * l2 * (|W1|^2 + |W2|^2).
    Y is one-hot. Returns (loss, (dW1, db1, dW2, db2)).
    """
    W1, _, W2, _ = weights
    n = len(X)
    Z, H, logits = forward(weights, X)

    loss = -np.sum(Y * log_softmax(logits, axis=1)) / n
    loss += 0.5 * l2 * (np.sum(W1 * W1) + np.sum(W2 * W2))

    d_logits = (softmax(logits, axis=1) - Y) / n
    dW2 = H.T @ d_logits + l2 * W2
    db2 = d_logits.sum(axis=0)
    dZ = (d_logits @ W2.T) * (Z > 0)
    dW1 = X.T @ dZ + l2 * W1
    db1 = dZ.sum(axis=0)
    return float(loss), (dW1, db1, dW2, db2)


def init_weights(n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator) -> Weights:
    W1 = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_hidden))
    W2 = rng.normal(0.0, np.sqrt(2.0 / (n_hidden + n_out)), size=(n_hidden, n_out))
    return W1, np.zeros(n_hidden), W2, np.zeros(n_out)


class OneHiddenLayerMLP(Model):
    """
    ReLU hidden layer, softmax output, cross-entropy, minibatch Adam.
    Training stops when the epoch loss has not improved by `tol` for
    `n_iter_no_change` epochs, or after `max_epochs`.
    """

    kind = "mlp_1hidden"

    def __init__(self, params: Dict[str, Any] | None = None):
        super().__init__(params)
        p = self.params
        self.hidden_units: int = int(p.get("hidden_units", 10))
        self.learning_rate: float = float(p.get("learning_rate", 1e-3))
        self.batch_size: int = int(p.get("batch_size", 32))
        self.max_epochs: int = int(p.get("max_epochs", 300))
        self.tol: float = float(p.get("tol", 1e-4))
        self.n_iter_no_change: int = int(p.get("n_iter_no_change", 10))
        self.l2: float = float(p.get("l2", 1e-4))
        self.seed: int = int(p.get("seed", 0))

        if self.hidden_units < 1:
            raise ValueError(f"hidden_units must be >= 1, got {self.hidden_units}")

        self.weights_: Weights | None = None
        self.loss_curve_: list[float] = []

    def fit(self, X, y) -> "OneHiddenLayerMLP":
        X, y = self._check_train(X, y)
        rng = np.random.default_rng(self.seed)
        k = len(self.classes_)
        Y = np.eye(k)[np.searchsorted(self.classes_, y)]

        weights = list(init_weights(X.shape[1], self.hidden_units, k, rng))
        m = [np.zeros_like(w) for w in weights]
        v = [np.zeros_like(w) for w in weights]
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        step = 0

        best = np.inf
        stale = 0
        self.loss_curve_ = []
        batch = max(1, min(self.batch_size, len(X)))

        for epoch in range(self.max_epochs):
            order = rng.permutation(len(X))
            epoch_loss = 0.0
            for start in range(0, len(X), batch):
                idx = order[start:start + batch]
                loss, grads = loss_and_grads(tuple(weights), X[idx], Y[idx], self.l2)
                epoch_loss += loss * len(idx)
                step += 1
                for i, g in enumerate(grads):
                    m[i] = beta1 * m[i] + (1 - beta1) * g
                    v[i] = beta2 * v[i] + (1 - beta2) * g * g
                    m_hat = m[i] / (1 - beta1 ** step)
                    v_hat = v[i] / (1 - beta2 ** step)
                    weights[i] = weights[i] - self.learning_rate * m_hat / (np.sqrt(v_hat) + eps)

            epoch_loss /= len(X)
            self.loss_curve_.append(epoch_loss)
            if epoch_loss > best - self.tol:
                stale += 1
                if stale >= self.n_iter_no_change:
                    logger.debug("h=%d stopped at epoch %d, loss %.4f",
                                 self.hidden_units, epoch + 1, epoch_loss)
                    break
            else:
                stale = 0
            best = min(best, epoch_loss)

        self.weights_ = tuple(weights)
        return self

    def predict_proba(self, X) -> np.ndarray:
        _, _, logits = forward(self.weights_, np.asarray(X, dtype=float))
        return softmax(logits, axis=1)

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
