"""Internal risk-set iteration shared by the model modules."""

from __future__ import annotations

import numpy as np

from .data import DiscreteSurvivalData, risk_summary


class RiskSets:
    """Precomputed risk-set membership for one dataset.

    Subjects are ordered by decreasing ``y_index`` once, so the risk set
    of interval ``j`` is the first ``n_j`` entries of that order.
    """

    def __init__(self, data: DiscreteSurvivalData):
        self.data = data
        summary = risk_summary(data)
        self.n_at_risk = summary.n_at_risk
        self.n_events = summary.n_events
        self.order = np.argsort(-data.y, kind="stable")
        self.event_intervals = np.flatnonzero(self.n_events > 0) + 1
        self._cache: dict[int, tuple] = {}

    def members(self, j: int) -> np.ndarray:
        """Indices of subjects at risk in interval ``j`` (1-based)."""
        return self.order[: self.n_at_risk[j - 1]]

    def interval(self, j: int, coef: np.ndarray):
        """Risk set of interval ``j``: (member indices, X, D, eta).

        ``eta = X @ coef`` evaluated at the interval's covariate values.
        Empty risk sets yield empty arrays.  Everything but ``eta`` is
        independent of ``coef`` and cached across repeated calls.
        """
        cached = self._cache.get(j)
        if cached is None:
            idx = self.members(j)
            X = self.data.covariates_at(j)[idx]
            D = (self.data.y[idx] == j) & self.data.delta[idx]
            cached = (idx, X, D)
            self._cache[j] = cached
        idx, X, D = cached
        return idx, X, D, X @ coef
