import math

import numpy as np
from sklearn.metrics import mutual_info_score

from .selector import Selector, discretize


class MRMRSelector(Selector):
    """
    Minimum-redundancy maximum-relevance, difference form:

        argmax_f  I(f; y) - mean_{s in S} I(f; s)

    over binned features. The greedy order is run for the first
    `greedy_fraction` of the features (enough to cover every selection
    threshold); the tail is ordered by relevance alone. The score is the
    reversed position in that order, scaled into (0, 1].
    """

    name = "mrmr"

    def _score(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        codes = discretize(X, int(self.params.get("n_bins", 10)))
        n = X.shape[1]
        depth = min(n, max(1, math.ceil(float(self.params.get("greedy_fraction", 0.25)) * n)))

        relevance = np.array([mutual_info_score(y, codes[:, j]) for j in range(n)])
        redundancy = np.zeros(n)
        remaining = np.ones(n, dtype=bool)
        selected = []

        for step in range(depth):
            crit = relevance - (redundancy / len(selected) if selected else 0.0)
            crit = np.where(remaining, crit, -np.inf)
            j = int(np.argmax(crit))          # first column wins exact ties
            selected.append(j)
            remaining[j] = False
            if step < depth - 1:
                for i in np.flatnonzero(remaining):
                    redundancy[i] += mutual_info_score(codes[:, j], codes[:, i])

        rest = sorted(np.flatnonzero(remaining), key=lambda i: (-relevance[i], i))
        order = selected + [int(i) for i in rest]
        scores = np.empty(n)
        scores[order] = np.arange(n, 0, -1) / n
        return scores
