"""Dynamic Bayesian networks from ODE models, with particle filtering."""

from .adaptive import run_adaptive
from .compiler import compile_model, export_dot
from .engine import AdaptiveStep, FixedStep, InferenceConfig, run_fixed
from .evidence import EvidenceStream, Mode, load_csv
from .expr import eval_expr, free_symbols, parse_expr
from .model import OdeModel, validate_model
from .modelfile import load_model, parse_model

__all__ = [
    "AdaptiveStep",
    "EvidenceStream",
    "FixedStep",
    "InferenceConfig",
    "Mode",
    "OdeModel",
    "compile_model",
    "eval_expr",
    "export_dot",
    "free_symbols",
    "load_csv",
    "load_model",
    "parse_expr",
    "parse_model",
    "run_adaptive",
    "run_fixed",
    "validate_model",
]

__version__ = "0.1.0"
