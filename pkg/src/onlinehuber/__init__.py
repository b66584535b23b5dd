"""Streaming Huber regression from per-batch summary statistics."""

__version__ = "0.1.0"

from .errors import (DegenerateMomentsError, DegenerateScaleError, DegenerateWeightsError,
                     HuberStreamError, InvalidInputError, NumericalError, SchemaError,
                     SingularMatrixError)
from .huber import HuberConfig, HuberFit, fit_huber, irls_weight, mad_scale, ols, psi, rho
from .streaming import (BatchData, RlsState, UpdatingState, dc_aggregate, finalize,
                        ingest_batch, merge, new_state, rls_finalize, rls_ingest, rls_new)

__all__ = [
    "BatchData", "DegenerateMomentsError", "DegenerateScaleError", "DegenerateWeightsError",
    "HuberConfig", "HuberFit", "HuberStreamError", "InvalidInputError", "NumericalError",
    "RlsState", "SchemaError", "SingularMatrixError", "UpdatingState", "dc_aggregate",
    "finalize", "fit_huber", "ingest_batch", "irls_weight", "mad_scale", "merge",
    "new_state", "ols", "psi", "rho", "rls_finalize", "rls_ingest", "rls_new",
]
