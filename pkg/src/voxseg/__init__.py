"""voxseg: desk-scale volumetric tumor segmentation on a self-contained
numpy autodiff substrate.

Import this package before numpy in fresh processes if you rely on
DEAP_THREADS: BLAS thread pools are sized from environment variables that
must be set before the first numpy import.
"""

import os as _os

# DEAP_THREADS pins kernel parallelism for deterministic numerics. It only
# takes effect if voxseg (or the env vars below) is loaded before numpy.
_threads = _os.environ.get("DEAP_THREADS")
if _threads:
    for _var in (
        "OPENBLAS_NUM_THREADS",
        "OMP_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
