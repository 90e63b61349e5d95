"""Semi-supervised generative estimation under stochastic labeling policies.

Naive Bayes and chain (HMM-style) models fitted by EM from partially labeled
data, the asymptotic covariance of the resulting estimators, and tools for
choosing how many labels to buy.
"""

from .asymptotics import (
    AsymptoticReport,
    asymptotic_report,
    identifiability_diagnostic,
    kl_gap,
    sigma_classification,
    sigma_structured,
)
from .core import (
    ConfigError,
    DataError,
    DocumentSet,
    EnumerationError,
    LabelObservation,
    NumericalError,
    ParamVector,
    SequenceSet,
)
from .estimation import EmConfig, FitResult, fit, fit_chain, fit_naive_bayes
from .experiments import StudyConfig, StudyResult, run_study
from .formats import load_corpus, load_model, save_corpus, save_model
from .models import ChainModel, NaiveBayesModel, predict, sample_from, score_observed
from .policy import (
    ContiguousWindow,
    EmptySelector,
    ExplicitIndexSet,
    FullSelector,
    LabelingPolicy,
    LengthDistribution,
    PrefixFraction,
    apply_policy,
    policy_cost,
)
from .tradeoff import Candidate, Objective, TradeoffSpec, frontier, solve_tradeoff, two_stage

__version__ = "0.1.0"
