"""Shapley-value attributions for token-sequence classifiers.

Exact enumeration, Shapley Value Sampling, KernelSHAP and an amortized
surrogate, with harnesses for cross-seed stability and masking faithfulness.
"""

from .core import (
    DEFAULT_PAD,
    Attribution,
    BudgetError,
    ContractViolation,
    Mask,
    NumericalError,
    Permutation,
    TokenSequence,
    apply_mask,
    derive_seed,
    mask_from_index_set,
)
from .classifier import AdditiveClassifier, ExternalClassifier, InteractionClassifier, load_classifier
from .game import Game
from .exact import exact_shapley
from .svs import svs
from .kernelshap import kernelshap, kernelshap_enumerated
from .kernels import BACKEND

__version__ = "0.1.0"
