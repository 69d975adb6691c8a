import numpy as np

from .selector import Selector


class VarianceRatioSelector(Selector):
    """
    Between-class share of variance with every class weighted equally:

        var(class means) / (var(class means) + mean(class variances))

    Unlike F it does not let the largest class dominate. Bounded in [0, 1].
    """

    name = "variance_ratio"

    def _score(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        classes = np.unique(y)
        means = np.vstack([X[y == c].mean(axis=0) for c in classes])
        within = np.vstack([X[y == c].var(axis=0) for c in classes]).mean(axis=0)
        between = means.var(axis=0)
        total = between + within
        return np.divide(between, total, out=np.zeros_like(total), where=total > 0)
