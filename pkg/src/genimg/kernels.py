"""Kernel backend selection.

The compiled extension is used when it imports; set ``GENIMG_PURE_PYTHON=1``
to force the pure-Python versions.
"""
import importlib
import os

KERNEL_NAMES = ("norm_ppf", "betainc_reg", "t_pvalue_two_sided", "clump_greedy")


def load_backend(name):
    """Return the kernel module for ``"cython"`` or ``"python"``."""
    if name == "cython":
        return importlib.import_module("genimg._kernels")
    if name == "python":
        return importlib.import_module("genimg._kernels_py")
    raise ValueError(f"unknown kernel backend {name!r}")


def _select():
    if os.environ.get("GENIMG_PURE_PYTHON", "") not in ("", "0"):
        return "python", load_backend("python")
    try:
        return "cython", load_backend("cython")
    except ImportError:
        return "python", load_backend("python")


BACKEND, _module = _select()
norm_ppf = _module.norm_ppf
betainc_reg = _module.betainc_reg
t_pvalue_two_sided = _module.t_pvalue_two_sided
clump_greedy = _module.clump_greedy
