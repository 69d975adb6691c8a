import warnings
from typing import Any, Dict

import numpy as np
from sklearn.preprocessing import KBinsDiscretizer

from ..core.errors import ConstantFeature

CONSTANT_PTP = 1e-12


def constant_columns(X: np.ndarray) -> np.ndarray:
    """Boolean mask of columns with no spread."""
    return np.ptp(X, axis=0) < CONSTANT_PTP


def discretize(X: np.ndarray, n_bins: int = 10) -> np.ndarray:
    """Equal-width ordinal bins per column; constant columns land in bin 0."""
    X = np.asarray(X, dtype=float)
    codes = np.zeros(X.shape, dtype=int)
    varying = ~constant_columns(X)
    if varying.any():
        kbd = KBinsDiscretizer(n_bins=n_bins, encode="ordinal", strategy="uniform")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            codes[:, varying] = kbd.fit_transform(X[:, varying]).astype(int)
    return codes


class Selector:
    """
    A univariate-or-multivariate relevance scorer. Higher score = more
    relevant. Subclasses implement `_score` on the non-constant columns;
    constant columns always score 0.
    """

    name = "base"

    def __init__(self, params: Dict[str, Any] | None = None):
        self.params = params or {}

    def _score(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def score(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        y = np.asarray(y)
        out = np.zeros(X.shape[1])
        varying = ~constant_columns(X)
        if varying.any():
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                raw = np.asarray(self._score(X[:, varying], y), dtype=float)
            out[varying] = np.nan_to_num(raw, nan=0.0, posinf=0.0, neginf=0.0)
        return out

    def score_column(self, x, y) -> float:
        x = np.asarray(x, dtype=float).reshape(-1, 1)
        if constant_columns(x)[0]:
            raise ConstantFeature(f"{self.name}: constant feature carries no information")
        return float(self.score(x, y)[0])
