# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the feed-forward classifier.

Same contract as ``hbfl._kernels_py``: flat parameter vector, per layer a
row-major ``(in, out)`` weight block followed by the bias, ReLU hidden
layers and a single sigmoid output.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, pow, isfinite

cnp.import_array()

from scipy.linalg.cython_blas cimport dgemm


cdef inline void _gemm(char ta, char tb, int m, int n, int k,
                       const double* a, int lda, const double* b, int ldb,
                       double beta, double* c, int ldc) noexcept nogil:
    # column-major BLAS; callers pass row-major operands in swapped order
    cdef double one = 1.0
    dgemm(&ta, &tb, &m, &n, &k, &one, <double*>a, &lda, <double*>b, &ldb,
          &beta, c, &ldc)


BCE_EPS = 1e-7
cdef double _BCE_EPS = 1e-7
cdef double _P_LO = np.nextafter(0.0, 1.0)
cdef double _P_HI = np.nextafter(1.0, 0.0)


cdef inline double _sigmoid(double z) noexcept nogil:
    cdef double e
    if z >= 0.0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


cdef class _Net:
    # layer widths plus offsets into the parameter vector and activation rows
    cdef Py_ssize_t nl, maxw, total_w
    cdef Py_ssize_t[::1] sizes
    cdef Py_ssize_t[::1] woff
    cdef Py_ssize_t[::1] aoff

    def __init__(self, sizes):
        cdef Py_ssize_t l, off = 0, aw = 0
        self.sizes = np.asarray(sizes, dtype=np.intp).copy()
        self.nl = self.sizes.shape[0] - 1
        self.woff = np.zeros(self.nl, dtype=np.intp)
        self.aoff = np.zeros(self.nl + 1, dtype=np.intp)
        self.maxw = 0
        for l in range(self.nl + 1):
            self.aoff[l] = aw
            aw += self.sizes[l]
            if self.sizes[l] > self.maxw:
                self.maxw = self.sizes[l]
        self.total_w = aw
        for l in range(self.nl):
            self.woff[l] = off
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1]


cdef void _forward_rows(_Net net, const double[::1] w, const double[:, ::1] x,
                        const Py_ssize_t[::1] rows, Py_ssize_t start, Py_ssize_t nb,
                        double[:, ::1] acts) noexcept nogil:
    cdef Py_ssize_t r, i, j, l, row, nin, nout
    cdef Py_ssize_t nl = net.nl
    cdef Py_ssize_t astride = acts.shape[1]
    cdef const double* wp
    cdef double* dst
    for r in range(nb):
        row = rows[start + r]
        for i in range(net.sizes[0]):
            acts[r, i] = x[row, i]
    for l in range(nl):
        nin = net.sizes[l]
        nout = net.sizes[l + 1]
        wp = &w[net.woff[l]]
        for r in range(nb):
            dst = &acts[r, net.aoff[l + 1]]
            for j in range(nout):
                dst[j] = wp[nin * nout + j]
        # Z = A @ W + Z
        _gemm(b'N', b'N', nout, nb, nin, wp, nout, &acts[0, net.aoff[l]], astride,
              1.0, &acts[0, net.aoff[l + 1]], astride)
        if l < nl - 1:
            for r in range(nb):
                dst = &acts[r, net.aoff[l + 1]]
                for j in range(nout):
                    if dst[j] < 0.0:
                        dst[j] = 0.0


cdef double _fwd_bwd(_Net net, const double[::1] w, double[::1] grad,
                     const double[:, ::1] x, const double[::1] y,
                     const Py_ssize_t[::1] rows, Py_ssize_t start, Py_ssize_t nb,
                     double[:, ::1] acts, double[:, ::1] dcur,
                     double[:, ::1] dprev) noexcept nogil:
    """Forward + backprop of mean BCE over one batch; returns the batch loss."""
    cdef Py_ssize_t r, i, j, l, nin, nout, ai
    cdef Py_ssize_t nl = net.nl
    cdef Py_ssize_t out_col = net.aoff[nl]
    cdef Py_ssize_t astride = acts.shape[1]
    cdef Py_ssize_t dstride = dcur.shape[1]
    cdef double p, pc, yv, loss = 0.0
    cdef const double* wp
    cdef double* gp

    _forward_rows(net, w, x, rows, start, nb, acts)
    for r in range(nb):
        p = _sigmoid(acts[r, out_col])
        yv = y[rows[start + r]]
        pc = p
        if pc < _BCE_EPS:
            pc = _BCE_EPS
        elif pc > 1.0 - _BCE_EPS:
            pc = 1.0 - _BCE_EPS
        loss += -(yv * log(pc) + (1.0 - yv) * log(1.0 - pc))
        dcur[r, 0] = (p - yv) / nb

    for l in range(nl - 1, -1, -1):
        nin = net.sizes[l]
        nout = net.sizes[l + 1]
        wp = &w[net.woff[l]]
        gp = &grad[net.woff[l]]
        ai = net.aoff[l]
        for j in range(nout):
            gp[nin * nout + j] = 0.0
        for r in range(nb):
            for j in range(nout):
                gp[nin * nout + j] += dcur[r, j]
        # dW = A.T @ D
        _gemm(b'N', b'T', nout, nin, nb, &dcur[0, 0], dstride, &acts[0, ai], astride,
              0.0, gp, nout)
        if l > 0:
            # D_prev = D @ W.T, then masked by the ReLU derivative
            _gemm(b'T', b'N', nin, nb, nout, wp, nout, &dcur[0, 0], dstride,
                  0.0, &dprev[0, 0], dstride)
            for r in range(nb):
                for i in range(nin):
                    dcur[r, i] = dprev[r, i] if acts[r, ai + i] > 0.0 else 0.0
    return loss / nb


def forward(values, sizes, x):
    cdef _Net net = _Net(sizes)
    cdef const double[::1] w = np.ascontiguousarray(values, dtype=np.float64)
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], r, start, nb
    cdef Py_ssize_t chunk = 512
    cdef Py_ssize_t[::1] rows = np.arange(n, dtype=np.intp)
    cdef double[:, ::1] acts = np.empty((chunk, net.total_w), dtype=np.float64)
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    cdef double p
    with nogil:
        start = 0
        while start < n:
            nb = n - start
            if nb > chunk:
                nb = chunk
            _forward_rows(net, w, xv, rows, start, nb, acts)
            for r in range(nb):
                p = _sigmoid(acts[r, net.aoff[net.nl]])
                if p < _P_LO:
                    p = _P_LO
                elif p > _P_HI:
                    p = _P_HI
                ov[start + r] = p
            start += chunk
    return out


def batch_gradient(values, sizes, x, y):
    cdef _Net net = _Net(sizes)
    cdef const double[::1] w = np.ascontiguousarray(values, dtype=np.float64)
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0]
    cdef Py_ssize_t[::1] rows = np.arange(n, dtype=np.intp)
    grad = np.empty(w.shape[0], dtype=np.float64)
    cdef double[::1] gv = grad
    cdef double[:, ::1] acts = np.empty((n, net.total_w), dtype=np.float64)
    cdef double[:, ::1] dcur = np.empty((n, net.maxw), dtype=np.float64)
    cdef double[:, ::1] dprev = np.empty((n, net.maxw), dtype=np.float64)
    cdef double loss
    with nogil:
        loss = _fwd_bwd(net, w, gv, xv, yv, rows, 0, n, acts, dcur, dprev)
    return grad, loss


def train(values, sizes, x, y, order, Py_ssize_t batch_size, double lr,
          double beta1, double beta2, double eps):
    """Mini-batch Adam over ``order`` (one row-index permutation per epoch).

    Returns ``(params, bad_epoch, bad_batch)``; the indices are -1 unless a
    non-finite gradient stopped training early.
    """
    cdef _Net net = _Net(sizes)
    params = np.array(values, dtype=np.float64, copy=True)
    cdef double[::1] w = params
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const Py_ssize_t[:, ::1] ov = np.ascontiguousarray(order, dtype=np.intp)
    cdef Py_ssize_t n = xv.shape[0], P = w.shape[0]
    cdef Py_ssize_t B = batch_size if batch_size < n else n
    cdef double[::1] g = np.empty(P, dtype=np.float64)
    cdef double[::1] m = np.zeros(P, dtype=np.float64)
    cdef double[::1] v = np.zeros(P, dtype=np.float64)
    cdef double[:, ::1] acts = np.empty((B, net.total_w), dtype=np.float64)
    cdef double[:, ::1] dcur = np.empty((B, net.maxw), dtype=np.float64)
    cdef double[:, ::1] dprev = np.empty((B, net.maxw), dtype=np.float64)
    cdef Py_ssize_t e, start, nb, k, bi, t = 0
    cdef Py_ssize_t bad_e = -1, bad_b = -1
    cdef double bc1, bc2, gk
    with nogil:
        for e in range(ov.shape[0]):
            bi = 0
            start = 0
            while start < n:
                nb = n - start
                if nb > batch_size:
                    nb = batch_size
                _fwd_bwd(net, w, g, xv, yv, ov[e], start, nb, acts, dcur, dprev)
                for k in range(P):
                    if not isfinite(g[k]):
                        bad_e = e
                        bad_b = bi
                        break
                if bad_e >= 0:
                    break
                t += 1
                bc1 = 1.0 - pow(beta1, <double>t)
                bc2 = 1.0 - pow(beta2, <double>t)
                for k in range(P):
                    gk = g[k]
                    m[k] = beta1 * m[k] + (1.0 - beta1) * gk
                    v[k] = beta2 * v[k] + (1.0 - beta2) * (gk * gk)
                    w[k] -= lr * (m[k] / bc1) / (sqrt(v[k] / bc2) + eps)
                start += batch_size
                bi += 1
            if bad_e >= 0:
                break
    return params, bad_e, bad_b
