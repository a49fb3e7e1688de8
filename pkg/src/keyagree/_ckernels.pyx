# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport log2, fabs
from libc.stdlib cimport malloc, calloc, free

cnp.import_array()

DEF MAXDIM = 64


cdef void _marg_ent(const double* fv, Py_ssize_t total, int nd, const long long* sh,
                    int nm, const unsigned long long* bits, double* out) noexcept nogil:
    cdef long long* ms = <long long*> malloc(nm * nd * sizeof(long long))
    cdef long long* base = <long long*> malloc((nm + 1) * sizeof(long long))
    cdef long long* of = <long long*> malloc(nm * sizeof(long long))
    cdef long long dg[MAXDIM]
    cdef long long s
    cdef int a, m
    cdef Py_ssize_t i
    cdef double v, h, p
    base[0] = 0
    for m in range(nm):
        s = 1
        for a in range(nd - 1, -1, -1):
            if (bits[m] >> a) & 1:
                ms[m * nd + a] = s
                s *= sh[a]
            else:
                ms[m * nd + a] = 0
        base[m + 1] = base[m] + s
        of[m] = base[m]
    cdef double* buf = <double*> calloc(base[nm], sizeof(double))
    for a in range(nd):
        dg[a] = 0
    for i in range(total):
        v = fv[i]
        if v != 0.0:
            for m in range(nm):
                buf[of[m]] += v
        a = nd - 1
        while a >= 0:
            dg[a] += 1
            if dg[a] < sh[a]:
                for m in range(nm):
                    of[m] += ms[m * nd + a]
                break
            for m in range(nm):
                of[m] -= ms[m * nd + a] * (sh[a] - 1)
            dg[a] = 0
            a -= 1
    for m in range(nm):
        h = 0.0
        if bits[m] != 0:
            for i in range(base[m], base[m + 1]):
                p = buf[i]
                if p > 0.0:
                    h -= p * log2(p)
        out[m] = h
    free(buf)
    free(ms)
    free(base)
    free(of)


def marginal_entropies_bits(cnp.ndarray mass, cnp.ndarray bits):
    """Entropies of the marginals selected by axis bitmasks ``bits``."""
    cdef cnp.ndarray[double, ndim=1, mode="c"] flat = np.ascontiguousarray(mass, dtype=np.float64).reshape(-1)
    cdef cnp.ndarray[cnp.uint64_t, ndim=1, mode="c"] b = np.ascontiguousarray(bits, dtype=np.uint64)
    cdef int nd = mass.ndim
    if nd > MAXDIM:
        raise ValueError("too many axes")
    cdef long long sh[MAXDIM]
    cdef int a
    for a in range(nd):
        sh[a] = mass.shape[a]
    cdef int nm = b.shape[0]
    cdef cnp.ndarray[double, ndim=1, mode="c"] out = np.empty(nm, dtype=np.float64)
    cdef Py_ssize_t total = flat.shape[0]
    with nogil:
        _marg_ent(&flat[0], total, nd, sh, nm, <unsigned long long*> &b[0], &out[0])
    return out


def marginal_entropies(mass, masks):
    mass = np.asarray(mass, dtype=np.float64)
    bits = np.zeros(len(masks), dtype=np.uint64)
    for i, keep in enumerate(masks):
        v = 0
        for ax in keep:
            v |= 1 << ax
        bits[i] = v
    return marginal_entropies_bits(mass, bits)


def typical_mask(codes, probs, double eps):
    cdef cnp.ndarray[cnp.int64_t, ndim=2, mode="c"] c = np.ascontiguousarray(codes, dtype=np.int64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] p = np.ascontiguousarray(probs, dtype=np.float64)
    cdef Py_ssize_t m = c.shape[0], n = c.shape[1], A = p.shape[0]
    cdef cnp.ndarray[cnp.uint8_t, ndim=1, mode="c"] out = np.ones(m, dtype=np.uint8)
    cdef long long* cnt = <long long*> malloc((A if A > 0 else 1) * sizeof(long long))
    cdef Py_ssize_t r, j, a
    cdef double inv_n = 1.0 / n if n > 0 else 0.0
    with nogil:
        for r in range(m):
            for a in range(A):
                cnt[a] = 0
            for j in range(n):
                cnt[c[r, j]] += 1
            for a in range(A):
                if fabs(cnt[a] * inv_n - p[a]) > eps * p[a] + 1e-12:
                    out[r] = 0
                    break
    free(cnt)
    return out.view(np.bool_)


def segment_entropies(values, cnp.ndarray index, cnp.ndarray offsets):
    cdef cnp.ndarray[double, ndim=1, mode="c"] v = np.ascontiguousarray(values, dtype=np.float64).reshape(-1)
    cdef cnp.ndarray[cnp.int64_t, ndim=2, mode="c"] idx = np.ascontiguousarray(index, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef Py_ssize_t nm = idx.shape[0], n = idx.shape[1]
    cdef cnp.ndarray[double, ndim=1, mode="c"] out = np.zeros(nm, dtype=np.float64)
    _segment_entropies(&v[0], <long long*> &idx[0, 0], <long long*> &off[0], nm, n, &out[0])
    return out


cdef void _segment_entropies(const double* v, const long long* idx, const long long* off,
                             Py_ssize_t nm, Py_ssize_t n, double* out) noexcept nogil:
    cdef Py_ssize_t total = off[nm], m, i
    cdef double* buf = <double*> calloc(total if total > 0 else 1, sizeof(double))
    cdef const long long* row
    cdef double h, p
    for m in range(nm):
        row = idx + m * n
        for i in range(n):
            buf[row[i]] += v[i]
    for m in range(nm):
        h = 0.0
        for i in range(off[m], off[m + 1]):
            p = buf[i]
            if p > 0.0:
                h -= p * log2(p)
        out[m] = h
    free(buf)
