from typing import Any, Dict

import numpy as np

from ..core.errors import SingleClassTrain


class Model:
    """
    A classifier configured by a plain params dict. `fit` returns self;
    `predict` returns labels drawn from the training labels.
    """

    kind = "base"

    def __init__(self, params: Dict[str, Any] | None = None):
        self.params = params or {}
        self.classes_: np.ndarray | None = None

    def _check_train(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y)
        if X.ndim != 2 or len(X) != len(y):
            raise ValueError(f"X {X.shape} and y {y.shape} do not line up")
        classes = np.unique(y)
        if classes.size < 2:
            raise SingleClassTrain(f"training data holds a single class {classes.tolist()}")
        self.classes_ = classes
        return X, y

    def fit(self, X, y) -> "Model":
        raise NotImplementedError

    def predict(self, X) -> np.ndarray:
        raise NotImplementedError

    def score(self, X, y) -> float:
        """Plain accuracy; for quick checks only."""
        return float(np.mean(self.predict(X) == np.asarray(y)))
