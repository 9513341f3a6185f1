"""Double-descent laboratory for quantum kernel regression."""

from . import data, exp, kernels, qstate, regress, rmt

__all__ = ["data", "exp", "kernels", "qstate", "regress", "rmt"]
