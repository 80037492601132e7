# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled kernels for the singular-kernel Volterra convolution.

History is processed in tiles small enough to stay cache-resident while
each tile is reused across a whole block of target rows; the innermost
path loop is contiguous and fuses the drift and diffusion contributions.
"""

BACKEND_NAME = "cython"

cdef extern from *:
    """
    static void fsde_fused_axpy2(double* __restrict acc,
                                 const double* __restrict fb,
                                 const double* __restrict fs,
                                 double w1, double w2, long n) {
        for (long j = 0; j < n; j++)
            acc[j] += w1 * fb[j] + w2 * fs[j];
    }

    /* Four target rows share each loaded F element (unroll-and-jam). The
       weight of row i+r at history k is w[node0 + (i+r) - k].            */
    static void fsde_fused_axpy2_x4(double* __restrict a0, double* __restrict a1,
                                    double* __restrict a2, double* __restrict a3,
                                    const double* __restrict fb,
                                    const double* __restrict fs,
                                    const double* __restrict w1,
                                    const double* __restrict w2, long n) {
        double u0 = w1[0], u1 = w1[1], u2 = w1[2], u3 = w1[3];
        double v0 = w2[0], v1 = w2[1], v2 = w2[2], v3 = w2[3];
        for (long j = 0; j < n; j++) {
            double f = fb[j], s = fs[j];
            a0[j] += u0 * f + v0 * s;
            a1[j] += u1 * f + v1 * s;
            a2[j] += u2 * f + v2 * s;
            a3[j] += u3 * f + v3 * s;
        }
    }
    """
    void fsde_fused_axpy2(double* acc, const double* fb, const double* fs,
                          double w1, double w2, long n) nogil
    void fsde_fused_axpy2_x4(double* a0, double* a1, double* a2, double* a3,
                             const double* fb, const double* fs,
                             const double* w1, const double* w2, long n) nogil

DEF KTILE = 40    # history rows per tile; KTILE x JTILE slabs stay L2-resident
DEF JTILE = 192   # path columns per tile


def far_field(double[::1] dw, double[::1] sw,
              double[:, ::1] Fb, double[:, ::1] Fs,
              Py_ssize_t k_lo, Py_ssize_t k_hi, Py_ssize_t node0,
              double[:, ::1] acc):
    """acc[i] += sum_{k in [k_lo, k_hi)} dw[node0+i-k]*Fb[k] + sw[node0+i-k]*Fs[k]."""
    cdef Py_ssize_t rows = acc.shape[0]
    cdef Py_ssize_t cols = acc.shape[1]
    cdef Py_ssize_t jt, jt_hi, kt, kt_hi, i, k, j, m
    cdef double w1, w2
    if k_hi <= k_lo:
        return
    with nogil:
        for jt in range(0, cols, JTILE):
            jt_hi = jt + JTILE
            if jt_hi > cols:
                jt_hi = cols
            for kt in range(k_lo, k_hi, KTILE):
                kt_hi = kt + KTILE
                if kt_hi > k_hi:
                    kt_hi = k_hi
                i = 0
                while i + 4 <= rows:
                    for k in range(kt, kt_hi):
                        m = node0 + i - k
                        fsde_fused_axpy2_x4(
                            &acc[i, jt], &acc[i + 1, jt],
                            &acc[i + 2, jt], &acc[i + 3, jt],
                            &Fb[k, jt], &Fs[k, jt], &dw[m], &sw[m],
                            jt_hi - jt)
                    i += 4
                while i < rows:
                    for k in range(kt, kt_hi):
                        m = node0 + i - k
                        fsde_fused_axpy2(&acc[i, jt], &Fb[k, jt], &Fs[k, jt],
                                         dw[m], sw[m], jt_hi - jt)
                    i += 1


def near_row(double[::1] dw, double[::1] sw,
             double[:, ::1] Fb, double[:, ::1] Fs,
             Py_ssize_t k_lo, Py_ssize_t k_hi, Py_ssize_t node,
             double[::1] out):
    """out += sum_{k in [k_lo, k_hi)} dw[node-k]*Fb[k] + sw[node-k]*Fs[k]."""
    cdef Py_ssize_t cols = out.shape[0]
    cdef Py_ssize_t k, m
    if k_hi <= k_lo:
        return
    with nogil:
        for k in range(k_lo, k_hi):
            m = node - k
            fsde_fused_axpy2(&out[0], &Fb[k, 0], &Fs[k, 0], dw[m], sw[m], cols)
