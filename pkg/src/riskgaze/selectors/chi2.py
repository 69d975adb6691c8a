import numpy as np
import pandas as pd
from scipy.stats import chi2_contingency

from .selector import Selector, discretize


class Chi2Selector(Selector):
    """Pearson chi-square of the bins x classes contingency table."""

    name = "chi2"

    def _score(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        codes = discretize(X, int(self.params.get("n_bins", 10)))
        out = np.zeros(X.shape[1])
        for j in range(X.shape[1]):
            table = pd.crosstab(codes[:, j], y).to_numpy()
            if table.shape[0] < 2 or table.shape[1] < 2:
                continue
            out[j] = chi2_contingency(table, correction=False).statistic
        return out
