"""Hazard-odds regression.

Fits the model ``p_j(x)/(1 - p_j(x)) = exp(beta_0j + x' beta)`` for the
conditional odds of an event in interval ``j`` given risk-set
membership, by solving the pooled estimating equation

    sum_j tau_j(beta) = 0,
    tau_j = sum_i R[j,i] { D[j,i] S0d_j - (1-D[j,i]) e^{X_i' beta} T_j } X_i / S0_j,

with ``S0_j = sum_l R[j,l] e^{X_l' beta}``, ``S0d_j`` the same sum over
event-free members and ``T_j`` the event count.  With binary X this is
the (weighted) Mantel-Haenszel estimating equation pooled over the
per-interval 2x2 tables.  Baselines follow by profiling:
``exp(beta_0j) = T_j / S0d_j``.

There is no concave objective behind this equation (the population
derivative matrix is non-symmetric), so Newton steps use the sample
analog ``H_hat`` of that derivative as an approximate Jacobian and
convergence is certified by the residual norm alone.

Four estimators of the asymptotic variance of ``sqrt(n)(beta_hat -
beta_bar)`` are provided: the model-robust sandwich (``var_robust_odds``),
the classical model-based form (``var_model_based_odds``), the tie-aware
form built from conditionally unbiased per-interval pieces
(``var_model_based2_odds``) and the older sparse-table-style form
(``var_model_based3_odds``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._risksets import RiskSets
from .data import DiscreteSurvivalData
from .errors import ConvergenceError, InputError, SingularMatrixError
from .prob import VarianceEstimate, fit_gamma

__all__ = [
    "OddsFit",
    "OddsInfluence",
    "OddsVarianceEstimate",
    "fit_beta",
    "score_beta",
    "jacobian_beta",
    "influence_odds",
    "var_robust_odds",
    "var_model_based_odds",
    "var_model_based2_odds",
    "var_model_based3_odds",
]


# ---------------------------------------------------------------------------
# per-interval kernels (raw sums; module-level wrappers divide by n)
# ---------------------------------------------------------------------------
#
# Every kernel is written in terms of risk-set aggregates so that the
# displayed double/triple sums cost O(m d^2) per risk set, and every
# weight ratio carries equally many exponential factors above and below
# the line, so the max-shift in _weights cancels exactly.

def _weights(eta):
    """Shifted exponential weights and the log of their true-scale sum."""
    c = float(np.max(eta)) if eta.size else 0.0
    w = np.exp(eta - c)
    s0 = float(w.sum())
    return w, s0, c


def _degenerate(D):
    """Risk sets with no events or with only events contribute zero."""
    T = int(D.sum())
    return T, (T == 0 or T == D.size)


def interval_score_odds(X, D, eta):
    """Raw score term ``(S0d * sum_i D_i X_i - T * sum_i (1-D_i) w_i X_i) / S0``."""
    T, skip = _degenerate(D)
    if skip:
        return np.zeros(X.shape[1])
    w, s0, _ = _weights(eta)
    wn = w * ~D
    s0d = float(wn.sum())
    M1 = wn @ X
    SD1 = X[D].sum(axis=0)
    return (s0d * SD1 - T * M1) / s0


def interval_jacobian_odds(X, D, eta):
    """Raw Jacobian term ``sum_i (1-D_i) w_i (T X_i - SD1)(X_i - xbar)' / S0``.

    This is the sample analog of the population derivative of the score
    in ``-beta'``; it is generally non-symmetric under ties.
    """
    d = X.shape[1]
    T, skip = _degenerate(D)
    if skip:
        return np.zeros((d, d))
    w, s0, _ = _weights(eta)
    wn = w * ~D
    s0d = float(wn.sum())
    M1 = wn @ X
    M2 = X.T @ (X * wn[:, None])
    SD1 = X[D].sum(axis=0)
    xbar = (w @ X) / s0
    out = T * M2 - np.outer(SD1, M1) - np.outer(T * M1 - s0d * SD1, xbar)
    return out / s0


def interval_gb(X, D, eta):
    """Raw classical model-based piece ``(T S0d / S0^2) sum_i w_i (X_i - me)^{x2}``
    with ``me`` the event-free-weighted covariate mean."""
    d = X.shape[1]
    T, skip = _degenerate(D)
    if skip:
        return np.zeros((d, d))
    w, s0, _ = _weights(eta)
    wn = w * ~D
    s0d = float(wn.sum())
    me = (wn @ X) / s0d
    Xc = X - me
    return (T * s0d / (s0 * s0)) * (Xc.T @ (Xc * w[:, None]))


def interval_sigma_hat(X, D, eta):
    """Raw tie-aware piece ``n * sigma_hat_j``: the triple sum

        sum_i { (1-D_i) w_i sum_l D_l w_l (X_i - X_l)^{x2}
                + w_i [sum_l (1-D_l) w_l (X_i - X_l)] [sum_k D_k (X_i - X_k)]' } / S0^2

    expanded into rank-structured aggregates.  Generally non-symmetric.
    """
    d = X.shape[1]
    T, skip = _degenerate(D)
    if skip:
        return np.zeros((d, d))
    w, s0, _ = _weights(eta)
    S1 = w @ X
    S2 = X.T @ (X * w[:, None])
    wd = w * D
    Tw = float(wd.sum())
    SDw1 = wd @ X
    SDw2 = X.T @ (X * wd[:, None])
    wn = w * ~D
    s0d = float(wn.sum())
    M1 = wn @ X
    M2 = X.T @ (X * wn[:, None])
    SD1 = X[D].sum(axis=0)
    term1 = Tw * M2 - np.outer(M1, SDw1) - np.outer(SDw1, M1) + s0d * SDw2
    term2 = (s0d * T * S2 - s0d * np.outer(S1, SD1)
             - T * np.outer(M1, S1) + s0 * np.outer(M1, SD1))
    return (term1 + term2) / (s0 * s0)


def interval_sigma_tilde(X, D, eta, symmetric=False):
    """Raw sparse-table-style piece ``n * sigma_tilde_j``: the triple sum

        sum_i (1-D_i) w_i [sum_l {(1-D_l) w_l + D_l w_i}(X_i - X_l)]
                          [sum_k D_k (X_i - X_k)]' / S0^2.

    ``symmetric=True`` evaluates the equivalent symmetric form
    ``sum_i (1-D_i) w_i { (T/S0d)(S0d X_i - M1)^{x2} + w_i (T X_i - SD1)^{x2} } / S0^2``
    instead; the two agree identically in exact arithmetic.
    """
    d = X.shape[1]
    T, skip = _degenerate(D)
    if skip:
        return np.zeros((d, d))
    w, s0, _ = _weights(eta)
    wn = w * ~D
    s0d = float(wn.sum())
    M1 = wn @ X
    SD1 = X[D].sum(axis=0)
    a = s0d * X - M1
    v = T * X - SD1
    if symmetric:
        out = ((a * wn[:, None]).T @ a) * (T / s0d) + (v * (wn * w)[:, None]).T @ v
    else:
        u = a + w[:, None] * v
        out = (u * wn[:, None]).T @ v
    return out / (s0 * s0)


def interval_influence_odds(X, D, eta):
    """Per-member influence rows ``g_j1(i) + g_j2(i)`` at raw scale.

    ``g_j1`` corrects for estimating the baseline odds, ``g_j2`` for the
    event-free share of the risk-set weight entering that baseline.
    """
    T, skip = _degenerate(D)
    if skip:
        return np.zeros(X.shape)
    w, s0, _ = _weights(eta)
    wn = w * ~D
    s0d = float(wn.sum())
    M1 = wn @ X
    SD1 = X[D].sum(axis=0)
    me = M1 / s0d
    Df = D.astype(float)
    resid = (Df * s0d - (1.0 - Df) * w * T) / s0
    rows = resid[:, None] * (X - me)
    q = (s0d * SD1 - T * M1) / s0
    factor = w / s0 - (1.0 - Df) * w / s0d
    rows -= factor[:, None] * q[None, :]
    return rows


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass
class OddsFit:
    """Converged hazard-odds fit.

    Attributes
    ----------
    beta : (d,) ndarray
        Log odds-ratio coefficients.
    beta0 : (J,) ndarray
        Baseline log odds ``log T_j - log S0d_j``; ``-inf`` for intervals
        without events, ``+inf`` for all-event risk sets.
    jacobian : (d, d) ndarray
        ``H_hat(beta_hat)``, the 1/n-scaled approximate Jacobian
        (generally non-symmetric under ties).
    score_norm : float
        Max-abs component of the 1/n-scaled score at ``beta``.
    iterations : int
    init : str
        Description of the starting point used by the solver.
    n : int
    warnings : list of str
    """

    beta: np.ndarray
    beta0: np.ndarray
    jacobian: np.ndarray
    score_norm: float
    iterations: int
    init: str
    n: int
    warnings: list = field(default_factory=list)


@dataclass
class OddsInfluence:
    """Per-subject influence vectors ``g_i = sum_j (g_j1 + g_j2)(i)``."""

    total: np.ndarray
    per_interval: dict | None = None


@dataclass
class OddsVarianceEstimate(VarianceEstimate):
    """Variance estimate for the hazard-odds coefficients (same layout
    and rescaling conventions as the hazard-probability one)."""


# ---------------------------------------------------------------------------
# score / jacobian / fitting
# ---------------------------------------------------------------------------

def _solve(mat, rhs, context):
    try:
        out = np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"{context}: singular matrix") from exc
    if not np.all(np.isfinite(out)):
        raise SingularMatrixError(f"{context}: non-finite solve result")
    return out


def _score_raw(rs, d, beta):
    out = np.zeros(d)
    for j in rs.event_intervals:
        _, X, D, eta = rs.interval(j, beta)
        out += interval_score_odds(X, D, eta)
    return out


def _jacobian_raw(rs, d, beta):
    out = np.zeros((d, d))
    for j in rs.event_intervals:
        _, X, D, eta = rs.interval(j, beta)
        out += interval_jacobian_odds(X, D, eta)
    return out


def score_beta(data: DiscreteSurvivalData, beta) -> np.ndarray:
    """Pooled estimating function, scaled by 1/n."""
    beta = np.asarray(beta, dtype=float)
    return _score_raw(RiskSets(data), data.d, beta) / data.n


def jacobian_beta(data: DiscreteSurvivalData, beta) -> np.ndarray:
    """``H_hat(beta)``: 1/n-scaled approximate Jacobian of the score.

    This is the sample analog of the population derivative matrix, not
    necessarily the exact derivative of the sample score under ties.
    """
    beta = np.asarray(beta, dtype=float)
    return _jacobian_raw(RiskSets(data), data.d, beta) / data.n


def _fd_jacobian_raw(rs, d, beta):
    """Central-difference Jacobian of the raw sample score (fallback)."""
    out = np.empty((d, d))
    for k in range(d):
        h = 1e-6 * (1.0 + abs(beta[k]))
        up = beta.copy()
        up[k] += h
        dn = beta.copy()
        dn[k] -= h
        out[:, k] = (_score_raw(rs, d, dn) - _score_raw(rs, d, up)) / (2.0 * h)
    return out


def baseline_log_odds(data: DiscreteSurvivalData, beta) -> np.ndarray:
    """Profiled baselines ``beta_0j = log T_j - log sum_i R[j,i](1-D[j,i]) e^{X_i' beta}``."""
    beta = np.asarray(beta, dtype=float)
    rs = RiskSets(data)
    J = data.n_intervals
    out = np.full(J, -np.inf)
    for j in range(1, J + 1):
        T = rs.n_events[j - 1]
        if T == 0:
            continue
        if T == rs.n_at_risk[j - 1]:
            out[j - 1] = np.inf
            continue
        _, _, D, eta = rs.interval(j, beta)
        eta_free = eta[~D]
        c = eta_free.max()
        out[j - 1] = np.log(T) - (np.log(np.exp(eta_free - c).sum()) + c)
    return out


def _newton(rs, n, d, start, tol, max_iter):
    beta = np.asarray(start, dtype=float).copy()
    score = _score_raw(rs, d, beta)
    merit = float(np.linalg.norm(score))
    score_norm = float(np.max(np.abs(score))) / n
    converged = score_norm <= tol
    it = 0
    for it in range(1, max_iter + 1):
        if converged:
            it -= 1
            break
        jac = _jacobian_raw(rs, d, beta)
        try:
            step = _solve(jac, score, "fit_beta")
        except SingularMatrixError:
            if score_norm <= tol:
                break
            raise
        hit = _backtrack(rs, n, d, beta, step, merit)
        if hit is None:
            step = _solve(_fd_jacobian_raw(rs, d, beta), score, "fit_beta[fd]")
            hit = _backtrack(rs, n, d, beta, step, merit)
        if hit is None:
            raise ConvergenceError("fit_beta: line search stalled",
                                   iterations=it, score_norm=score_norm)
        beta, score, merit = hit
        score_norm = float(np.max(np.abs(score))) / n
        converged = score_norm <= tol
        if not converged and np.max(np.abs(beta)) > 50.0:
            raise ConvergenceError(
                "fit_beta: divergence (monotone likelihood suspected)",
                iterations=it, score_norm=score_norm)
    if not converged:
        raise ConvergenceError(
            f"fit_beta: no convergence in {max_iter} iterations",
            iterations=max_iter, score_norm=score_norm)
    return beta, score_norm, it


def _backtrack(rs, n, d, beta, step, merit):
    t = 1.0
    while t >= 2.0 ** -40:
        cand = beta + t * step
        cand_score = _score_raw(rs, d, cand)
        cand_merit = float(np.linalg.norm(cand_score))
        if cand_merit < merit:
            return cand, cand_score, cand_merit
        t /= 2.0
    return None


def fit_beta(data: DiscreteSurvivalData, tol: float = 1e-9,
             max_iter: int = 50, init=None, multistart: bool = False) -> OddsFit:
    """Newton solve of the pooled odds estimating equation.

    Steps use the sample Jacobian analog ``H_hat`` with backtracking on
    the residual 2-norm, falling back to a finite-difference Jacobian if
    a step stalls; convergence requires the max-abs 1/n-scaled score
    component to fall below ``tol``.  The default start is the
    hazard-probability estimate (the two roots are typically close);
    pass ``init`` to override, or ``multistart=True`` to also solve from
    zero and warn if the roots disagree.

    Raises
    ------
    InputError
        No covariates, no events, or no risk set with both events and
        event-free members.
    SingularMatrixError
        Singular Jacobian away from a root.
    ConvergenceError
        Iteration budget exhausted, stalled line search, or divergence
        (``|beta|_inf > 50`` with non-vanishing score).
    """
    if data.d < 1:
        raise InputError("no covariates to fit")
    rs = RiskSets(data)
    if rs.event_intervals.size == 0:
        raise InputError("dataset contains no events")
    mixed = (rs.n_events > 0) & (rs.n_events < rs.n_at_risk)
    if not np.any(mixed):
        raise InputError(
            "every risk set with events is all-events; odds score is identically zero")
    n, d = data.n, data.d

    warnings = []
    if init is not None:
        starts = [("user-supplied", np.asarray(init, dtype=float))]
    else:
        try:
            gamma = fit_gamma(data, tol=tol, max_iter=max_iter).gamma
            starts = [("breslow-peto", gamma)]
        except (ConvergenceError, SingularMatrixError):
            starts = [("zero (breslow-peto start unavailable)", np.zeros(d))]
    if multistart:
        starts.append(("zero", np.zeros(d)))

    solved = []
    failures = []
    for label, start in starts:
        try:
            solved.append((label, _newton(rs, n, d, start, tol, max_iter)))
        except (ConvergenceError, SingularMatrixError) as exc:
            if not multistart:
                raise
            failures.append((label, exc))
    if not solved:
        raise failures[0][1]
    warnings.extend(f"multistart: solve from '{label}' failed"
                    for label, _ in failures)
    label, (beta, score_norm, iterations) = solved[0]
    if multistart and len(solved) == 2:
        other = solved[1][1][0]
        if np.max(np.abs(beta - other)) > 1e-6 * (1.0 + np.max(np.abs(beta))):
            warnings.append(
                "multistart: roots from the two starting points differ; "
                "the estimating equation may have multiple solutions")

    if np.max(np.abs(beta)) > 10.0:
        warnings.append(
            "extreme coefficient (|beta| > 10): the score vanishes in the "
            "tail, so the equation may have no finite root (separation)")
    n_all_events = int(np.sum((rs.n_events > 0) & (rs.n_events == rs.n_at_risk)))
    if n_all_events:
        warnings.append(
            f"{n_all_events} risk set(s) consist entirely of events; "
            "their baseline log-odds are +inf and they contribute nothing to the fit")
    beta0 = baseline_log_odds(data, beta)
    jac = _jacobian_raw(rs, d, beta) / n
    return OddsFit(beta=beta, beta0=beta0, jacobian=jac, score_norm=score_norm,
                   iterations=iterations, init=label, n=n, warnings=warnings)


# ---------------------------------------------------------------------------
# variance estimators
# ---------------------------------------------------------------------------

def influence_odds(data: DiscreteSurvivalData, fit: OddsFit,
                   per_interval: bool = False) -> OddsInfluence:
    """Per-subject influence sums ``g_i`` entering the robust sandwich."""
    rs = RiskSets(data)
    total = np.zeros((data.n, data.d))
    pieces = {} if per_interval else None
    for j in rs.event_intervals:
        idx, X, D, eta = rs.interval(j, fit.beta)
        rows = interval_influence_odds(X, D, eta)
        total[idx] += rows
        if per_interval:
            piece = np.zeros((data.n, data.d))
            piece[idx] = rows
            pieces[int(j)] = piece
    return OddsInfluence(total=total, per_interval=pieces)


def _sandwich_odds(jac, meat, n, kind, robust):
    inv = _solve(jac, np.eye(jac.shape[0]), f"var_{kind}")
    right = inv.T if robust else inv
    mat = inv @ meat @ right
    return OddsVarianceEstimate(kind=kind, matrix=0.5 * (mat + mat.T), n=n)


def _interval_meat(data, fit, kernel):
    rs = RiskSets(data)
    meat = np.zeros((data.d, data.d))
    for j in rs.event_intervals:
        _, X, D, eta = rs.interval(j, fit.beta)
        meat += kernel(X, D, eta)
    return meat / data.n


def var_robust_odds(data: DiscreteSurvivalData, fit: OddsFit) -> OddsVarianceEstimate:
    """Model-robust sandwich ``H^-1 G H^-T`` with empirical influence meat."""
    g = influence_odds(data, fit).total
    meat = (g.T @ g) / data.n
    return _sandwich_odds(fit.jacobian, meat, data.n, "robust", robust=True)


def var_model_based_odds(data: DiscreteSurvivalData, fit: OddsFit) -> OddsVarianceEstimate:
    """Classical model-based sandwich ``H^-1 G_b H^-1`` (valid without ties)."""
    meat = _interval_meat(data, fit, interval_gb)
    return _sandwich_odds(fit.jacobian, meat, data.n, "model_based", robust=False)


def var_model_based2_odds(data: DiscreteSurvivalData, fit: OddsFit) -> OddsVarianceEstimate:
    """Tie-aware model-based sandwich from conditionally unbiased pieces."""

    def kernel(X, D, eta):
        s = interval_sigma_hat(X, D, eta)
        return 0.5 * (s + s.T)

    meat = _interval_meat(data, fit, kernel)
    return _sandwich_odds(fit.jacobian, meat, data.n, "model_based2", robust=False)


def var_model_based3_odds(data: DiscreteSurvivalData, fit: OddsFit) -> OddsVarianceEstimate:
    """Sparse-table-style model-based sandwich (three-way event products)."""
    meat = _interval_meat(data, fit, interval_sigma_tilde)
    return _sandwich_odds(fit.jacobian, meat, data.n, "model_based3", robust=False)
