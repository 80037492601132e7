"""NumPy kernels for the singular-kernel Volterra convolution.

Fallback backend: history blocks are contracted with Toeplitz weight slices
through BLAS matmuls.  Same call contract as the compiled backend; rounding
may differ at the reduction-order level (~1e-13 relative).
"""

import numpy as np

BACKEND_NAME = "numpy"


def far_field(dw, sw, Fb, Fs, k_lo, k_hi, node0, acc):
    """acc[i] += sum_{k in [k_lo, k_hi)} dw[node0+i-k]*Fb[k] + sw[node0+i-k]*Fs[k].

    Target rows i = 0..acc.shape[0]-1 correspond to nodes node0 + i; all
    lags node0 + i - k must be >= 1.
    """
    if k_hi <= k_lo:
        return
    lags = (node0 + np.arange(acc.shape[0]))[:, None] - np.arange(k_lo, k_hi)[None, :]
    acc += dw[lags] @ Fb[k_lo:k_hi]
    acc += sw[lags] @ Fs[k_lo:k_hi]


def near_row(dw, sw, Fb, Fs, k_lo, k_hi, node, out):
    """out += sum_{k in [k_lo, k_hi)} dw[node-k]*Fb[k] + sw[node-k]*Fs[k]."""
    if k_hi <= k_lo:
        return
    lag = node - np.arange(k_lo, k_hi)
    out += dw[lag] @ Fb[k_lo:k_hi]
    out += sw[lag] @ Fs[k_lo:k_hi]
