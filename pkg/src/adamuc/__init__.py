"""Adam-based solver for reserve- and security-constrained AC unit commitment."""

from .case import Case, CaseError, load_case, save_case
from .generator import default_suite, generate_synthetic_case
from .state import FlatState, init_state

__all__ = ["Case", "CaseError", "load_case", "save_case", "generate_synthetic_case",
           "default_suite", "FlatState", "init_state"]
__version__ = "0.1.0"
