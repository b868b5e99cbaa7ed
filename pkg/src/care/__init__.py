"""CARE: confounder-aware aggregation of LLM judge scores."""
from .errors import CareError, InputError, NumericalError
from .dataio import ScoreMatrix, load_csv, from_array
from .pipeline import fit_svd, fit_tensor

__version__ = "0.1.0"

__all__ = ["CareError", "InputError", "NumericalError", "ScoreMatrix", "load_csv",
           "from_array", "fit_svd", "fit_tensor", "__version__"]
