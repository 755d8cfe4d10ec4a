"""Latent-class binary logit for referendum choice experiments with pinned segments."""

from .choice_data import DEFAULT_SCHEMA, AttributeSpec, Dataset, load_dataset, save_dataset
from .design import DesignConfig, generate_design, levy_bounds
from .estimation import FitOptions, FitResult, fit
from .likelihood import LikelihoodContext
from .model_spec import ClassSpec, ModelSpec, UtilityTerm, load_spec, validate_spec
from .simulate import SimConfig, recovery_experiment, simulate_population
from .wtp import household_average_wtp, segment_shares, segment_wtp

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_SCHEMA",
    "AttributeSpec",
    "ClassSpec",
    "Dataset",
    "DesignConfig",
    "FitOptions",
    "FitResult",
    "LikelihoodContext",
    "ModelSpec",
    "SimConfig",
    "UtilityTerm",
    "fit",
    "generate_design",
    "household_average_wtp",
    "levy_bounds",
    "load_dataset",
    "load_spec",
    "recovery_experiment",
    "save_dataset",
    "segment_shares",
    "segment_wtp",
    "simulate_population",
    "validate_spec",
]
