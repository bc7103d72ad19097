"""Volterra signatures of piecewise-linear paths and the associated signature kernels."""

__version__ = "0.1.0"

from .fft_scheme import run_fft_batch, run_fft_scheme
from .fssk import FsskData, JordanBlock, JordanForm, eval_phi_psi, run_fssk
from .kernel_weights import (
    Constant,
    Exponential,
    Fractional,
    Gamma,
    MatrixKernelSpec,
    PiecewiseConstant,
    StateSpace,
    word_weight,
)
from .paths import Path, gen_paths
from .quad_scheme import ExponentSet, run_scheme
from .sig_kernel import StaticLift, run_goursat
from .tensor_algebra import TruncatedTensor, signature_pwl

__all__ = [
    "Constant",
    "ExponentSet",
    "Exponential",
    "Fractional",
    "FsskData",
    "Gamma",
    "JordanBlock",
    "JordanForm",
    "MatrixKernelSpec",
    "Path",
    "PiecewiseConstant",
    "StateSpace",
    "StaticLift",
    "TruncatedTensor",
    "eval_phi_psi",
    "gen_paths",
    "run_fft_batch",
    "run_fft_scheme",
    "run_fssk",
    "run_goursat",
    "run_scheme",
    "signature_pwl",
    "word_weight",
]
