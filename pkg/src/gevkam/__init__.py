"""KAM almost-reducibility for quasi-periodic linear cocycles in Gevrey-2 classes."""
import os as _os

# KAM_THREADS caps BLAS parallelism; it only takes effect before numpy loads
if _os.environ.get("KAM_THREADS"):
    for _v in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_v, _os.environ["KAM_THREADS"])

from .arithmetic import DiophantineData, diophantine_check, spectrum_dc_check  # noqa: E402
from .kam import KamParams, RunResult, run  # noqa: E402
from .torus_fn import GroupTag, TorusMatFn, gevrey_upper_bound  # noqa: E402

__all__ = ["DiophantineData", "GroupTag", "KamParams", "RunResult", "TorusMatFn",
           "diophantine_check", "gevrey_upper_bound", "run", "spectrum_dc_check"]
__version__ = "0.1.0"
