import numpy as np
from scipy.spatial.distance import cdist

from .selector import Selector


class ReliefFSelector(Selector):
    """
    ReliefF with Manhattan distance on range-scaled features. For every
    sample, the k nearest hits pull a feature's weight down and the k
    nearest misses of each other class (weighted by class prior) push it up.
    """

    name = "relieff"

    def _score(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        k = int(self.params.get("n_neighbors", 10))
        Xs = (X - X.min(axis=0)) / np.ptp(X, axis=0)
        D = cdist(Xs, Xs, metric="cityblock")

        classes, counts = np.unique(y, return_counts=True)
        prior = dict(zip(classes.tolist(), (counts / len(y)).tolist()))
        members = {c: np.flatnonzero(y == c) for c in classes.tolist()}

        m = len(y)
        w = np.zeros(X.shape[1])
        for i in range(m):
            yi = y[i].item() if hasattr(y[i], "item") else y[i]
            same = members[yi][members[yi] != i]
            if same.size:
                hits = same[np.argsort(D[i, same], kind="stable")[:k]]
                w -= np.abs(Xs[hits] - Xs[i]).mean(axis=0) / m
            for c, idx in members.items():
                if c == yi:
                    continue
                misses = idx[np.argsort(D[i, idx], kind="stable")[:k]]
                weight = prior[c] / (1.0 - prior[yi])
                w += weight * np.abs(Xs[misses] - Xs[i]).mean(axis=0) / m
        return w
