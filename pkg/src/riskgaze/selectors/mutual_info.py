import numpy as np
from sklearn.metrics import mutual_info_score

from .selector import Selector, discretize


class MutualInfoSelector(Selector):
    """Mutual information (nats) between the binned feature and the class."""

    name = "mutual_info"

    def _score(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        codes = discretize(X, int(self.params.get("n_bins", 10)))
        return np.array([mutual_info_score(y, codes[:, j]) for j in range(X.shape[1])])
