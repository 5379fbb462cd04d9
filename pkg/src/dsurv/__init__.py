"""Discrete-time survival regression.

Two pooled estimating-equation models for grouped or inherently
discrete event times — a hazard-probability model with log link and a
hazard-odds model with logistic link — with model-based and
model-robust variance estimation, survival-curve estimates with
delta-method standard errors, a pooled person-period logistic baseline,
closed-form two-sample specializations for stratified 2x2 tables, and a
seeded simulation harness.
"""

from .data import (CensorOption, DiscreteSurvivalData, RiskSetSummary, Static,
                   SubjectRecord, TimeGrid, TimeVarying, discretize,
                   expand_step_terms, risk_summary)
from .errors import ConvergenceError, InputError, SingularMatrixError
from .odds import (OddsFit, OddsInfluence, OddsVarianceEstimate,
                   baseline_log_odds, fit_beta, influence_odds, jacobian_beta,
                   score_beta, var_model_based2_odds, var_model_based3_odds,
                   var_model_based_odds, var_robust_odds)
from .plogit import PlogitFit, fit_plogit, plogit_variances
from .prob import (ProbFit, ProbInfluence, VarianceEstimate,
                   baseline_log_hazards, fit_gamma, hessian_gamma,
                   influence_prob, score_gamma, var_model_based,
                   var_model_based2, var_oldstyle, var_robust)
from .sim import (EnumeratedMoments, SimScenario, SimSummary,
                  enumerate_conditional, generate, replicate, summary_to_csv)
from .survcurve import (SurvCurveWork, SurvivalCurve, hazard_variation_terms,
                        odds_curve, prob_curve, prob_cumhaz_alt)
from .twosample import (BpTwoSample, StratifiedTables, WmhTwoSample,
                        bp_two_sample, tables_to_survival, wmh_two_sample)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # data
    "CensorOption", "DiscreteSurvivalData", "RiskSetSummary", "Static",
    "SubjectRecord", "TimeGrid", "TimeVarying", "discretize",
    "expand_step_terms", "risk_summary",
    # errors
    "ConvergenceError", "InputError", "SingularMatrixError",
    # probability model
    "ProbFit", "ProbInfluence", "VarianceEstimate", "baseline_log_hazards",
    "fit_gamma", "hessian_gamma", "influence_prob", "score_gamma",
    "var_model_based", "var_model_based2", "var_oldstyle", "var_robust",
    # odds model
    "OddsFit", "OddsInfluence", "OddsVarianceEstimate", "baseline_log_odds",
    "fit_beta", "influence_odds", "jacobian_beta", "score_beta",
    "var_model_based2_odds", "var_model_based3_odds", "var_model_based_odds",
    "var_robust_odds",
    # pooled logistic
    "PlogitFit", "fit_plogit", "plogit_variances",
    # survival curves
    "SurvCurveWork", "SurvivalCurve", "hazard_variation_terms", "odds_curve",
    "prob_curve", "prob_cumhaz_alt",
    # two-sample closed forms
    "BpTwoSample", "StratifiedTables", "WmhTwoSample", "bp_two_sample",
    "tables_to_survival", "wmh_two_sample",
    # simulation harness
    "EnumeratedMoments", "SimScenario", "SimSummary", "enumerate_conditional",
    "generate", "replicate", "summary_to_csv",
]
