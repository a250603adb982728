"""Thin-lens radiance fields with multi-blur training."""
import os

# BLAS reads its thread count once, at numpy import, so this must run first.
if threads := os.environ.get("LENSFIELD_THREADS"):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, threads)

__version__ = "0.1.0"
