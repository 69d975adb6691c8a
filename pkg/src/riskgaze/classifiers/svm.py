import logging
from itertools import combinations
from typing import Any, Dict, List, Tuple

import numpy as np
from sklearn.svm import SVC

from .model import Model

logger = logging.getLogger(__name__)


class SVMClassifier(Model):
    """
    Soft-margin kernel SVM, one libsvm SMO problem per class pair.

    Prediction is a one-vs-one majority vote; a tied vote goes to the class
    with the larger summed signed decision value, then to the lower class
    index. After fitting, `kkt_residual` holds the largest KKT violation
    over all pairwise duals:

        alpha = 0      y f(x) >= 1
        0 < alpha < C  y f(x) == 1
        alpha = C      y f(x) <= 1
    """

    def __init__(self, params: Dict[str, Any] | None = None):
        super().__init__(params)
        p = self.params
        self.kernel: str = str(p.get("kernel", "linear"))
        self.C: float = float(p.get("C", 1.0))
        self.gamma: float | None = p.get("gamma")
        self.tol: float = float(p.get("tol", 1e-3))
        self.max_iter: int = int(p.get("max_iter", 100_000))
        self.kkt_check: bool = bool(p.get("kkt_check", True))

        if self.kernel not in ("linear", "rbf"):
            raise ValueError(f"kernel must be linear or rbf, got {self.kernel!r}")
        if not self.C > 0:
            raise ValueError(f"C must be positive, got {self.C}")
        if self.kernel == "rbf" and not (self.gamma is not None and float(self.gamma) > 0):
            raise ValueError(f"rbf kernel needs gamma > 0, got {self.gamma}")

        self.pairs_: List[Tuple[int, int, SVC]] = []
        self.kkt_residual: float = 0.0

    @property
    def kind(self) -> str:
        return f"svm_{self.kernel}"

    def _svc(self) -> SVC:
        return SVC(
            kernel=self.kernel,
            C=self.C,
            gamma=float(self.gamma) if self.kernel == "rbf" else "scale",
            tol=self.tol,
            max_iter=self.max_iter,
        )

    def fit(self, X, y) -> "SVMClassifier":
        X, y = self._check_train(X, y)
        self.pairs_ = []
        residuals = []
        for a, b in combinations(range(len(self.classes_)), 2):
            mask = (y == self.classes_[a]) | (y == self.classes_[b])
            target = np.where(y[mask] == self.classes_[a], 1, -1)
            svc = self._svc().fit(X[mask], target)
            self.pairs_.append((a, b, svc))
            if self.kkt_check:
                residuals.append(kkt_residual(svc, X[mask], target, self.C))

        self.kkt_residual = max(residuals) if residuals else 0.0
        if self.kkt_check and self.kkt_residual > self.tol + 1e-6:
            logger.warning("KKT residual %.3g exceeds tolerance %.3g (C=%g, max_iter=%d)",
                           self.kkt_residual, self.tol, self.C, self.max_iter)
        return self

    def votes(self, X) -> Tuple[np.ndarray, np.ndarray]:
        X = np.asarray(X, dtype=float)
        k = len(self.classes_)
        votes = np.zeros((len(X), k), dtype=int)
        dsum = np.zeros((len(X), k))
        for a, b, svc in self.pairs_:
            d = svc.decision_function(X)
            win_a = d > 0
            votes[:, a] += win_a
            votes[:, b] += ~win_a
            dsum[:, a] += d
            dsum[:, b] -= d
        return votes, dsum

    def predict(self, X) -> np.ndarray:
        votes, dsum = self.votes(X)
        k = votes.shape[1]
        winners = np.array([
            min(range(k), key=lambda c: (-votes[i, c], -dsum[i, c], c))
            for i in range(len(votes))
        ], dtype=int)
        return self.classes_[winners]


def kkt_residual(svc: SVC, X: np.ndarray, target: np.ndarray, C: float) -> float:
    """Largest KKT violation of a fitted binary SVC on its own training set."""
    margin = target * svc.decision_function(X)
    alpha = np.zeros(len(X))
    alpha[svc.support_] = np.abs(svc.dual_coef_[0])

    at_upper = alpha >= C * (1 - 1e-12)
    at_zero = alpha <= 0
    free = ~at_upper & ~at_zero

    r = np.zeros(len(X))
    r[at_zero] = np.maximum(0.0, 1.0 - margin[at_zero])
    r[free] = np.abs(1.0 - margin[free])
    r[at_upper] = np.maximum(0.0, margin[at_upper] - 1.0)
    return float(r.max()) if r.size else 0.0
