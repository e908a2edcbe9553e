# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops.

Both functions mirror :mod:`treerecon._fallback` operation for operation so
the two backends produce bit-identical magnetization values.
"""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t
from libc.stdlib cimport calloc, free
from libc.string cimport memcpy

cnp.import_array()

cdef double RESCALE_BELOW = 1e-200
cdef uint64_t GAMMA = 0x9E3779B97F4A7C15ULL
cdef double TWO_M53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t key, uint64_t counter) noexcept nogil:
    return <double>(_mix64(key + (counter + 1) * GAMMA) >> 11) * TWO_M53


def sample_magnetizations(
    const cnp.int64_t[::1] parent,
    const cnp.int64_t[::1] child_start,
    const cnp.int64_t[::1] child_count,
    const double[::1] eps_plus,
    const double[::1] eps_minus,
    double pi_plus,
    int root_state,
    uint64_t key,
    uint64_t first_sample,
    Py_ssize_t n_samples,
):
    """Simulate the broadcast chain top-down; return the root magnetization per sample.

    The uniform driving vertex ``v`` of sample ``s`` is a pure function of
    ``(key, s * n_vertices + v)``; vertex 0's draw picks the root state when
    ``root_state == 0``.
    """
    cdef Py_ssize_t n = parent.shape[0]
    cdef Py_ssize_t i, v, c, c0, c1
    cdef uint64_t base
    cdef double pi_minus = 1.0 - pi_plus
    cdef double ap, am, rc, mp, mm, tot, post, u
    out = np.empty(n_samples, dtype=np.float64)
    cdef double[::1] x = out
    state_arr = np.empty(n, dtype=np.int8)
    r_arr = np.empty(n, dtype=np.float64)
    cdef signed char[::1] state = state_arr
    cdef double[::1] r = r_arr
    with nogil:
        for i in range(n_samples):
            base = (first_sample + <uint64_t>i) * <uint64_t>n
            if root_state == 0:
                state[0] = 1 if _uniform(key, base) < pi_plus else -1
            else:
                state[0] = root_state
            for v in range(1, n):
                u = _uniform(key, base + <uint64_t>v)
                if state[parent[v]] == 1:
                    state[v] = 1 if u < 1.0 - eps_plus[v] else -1
                else:
                    state[v] = 1 if u < 1.0 - eps_minus[v] else -1
            for v in range(n - 1, -1, -1):
                if child_count[v] == 0:
                    r[v] = 1.0 if state[v] == 1 else 0.0
                    continue
                ap = 1.0
                am = 1.0
                c0 = child_start[v]
                c1 = c0 + child_count[v]
                for c in range(c0, c1):
                    rc = r[c]
                    mp = (1.0 - eps_plus[c]) * rc + eps_plus[c] * (1.0 - rc)
                    mm = (1.0 - eps_minus[c]) * rc + eps_minus[c] * (1.0 - rc)
                    ap = ap * mp
                    am = am * mm
                    tot = ap + am
                    if tot < RESCALE_BELOW:
                        ap = ap / tot
                        am = am / tot
                r[v] = ap / (ap + am)
            post = pi_plus * r[0] / (pi_plus * r[0] + pi_minus * (1.0 - r[0]))
            x[i] = (post - pi_plus) / pi_minus
    return out


def uniforms(uint64_t key, uint64_t first_sample, Py_ssize_t n_samples, Py_ssize_t n_vertices):
    """The draws used by :func:`sample_magnetizations`, as an array (for testing)."""
    out = np.empty((n_samples, n_vertices), dtype=np.float64)
    cdef double[:, ::1] u = out
    cdef Py_ssize_t i, v
    with nogil:
        for i in range(n_samples):
            for v in range(n_vertices):
                u[i, v] = _uniform(key, (first_sample + <uint64_t>i) * <uint64_t>n_vertices + <uint64_t>v)
    return out


# ------------------------------------------------------------ enumeration

cdef struct Table:
    uint64_t *keys
    double *vals
    char *used
    Py_ssize_t size
    Py_ssize_t count
    int shift


cdef inline uint64_t _bits(double x) noexcept nogil:
    cdef uint64_t b
    memcpy(&b, &x, 8)
    return b


cdef int _table_init(Table *t, int log_size) noexcept nogil:
    t.size = (<Py_ssize_t>1) << log_size
    t.shift = 64 - log_size
    t.count = 0
    t.keys = <uint64_t *>calloc(t.size, sizeof(uint64_t))
    t.vals = <double *>calloc(t.size, sizeof(double))
    t.used = <char *>calloc(t.size, sizeof(char))
    return 0 if (t.keys != NULL and t.vals != NULL and t.used != NULL) else -1


cdef void _table_free(Table *t) noexcept nogil:
    free(t.keys)
    free(t.vals)
    free(t.used)


cdef inline void _table_add(Table *t, uint64_t key, double val) noexcept nogil:
    cdef Py_ssize_t h = <Py_ssize_t>((key * GAMMA) >> t.shift)
    while t.used[h]:
        if t.keys[h] == key:
            t.vals[h] += val
            return
        h = (h + 1) & (t.size - 1)
    t.used[h] = 1
    t.keys[h] = key
    t.vals[h] = val
    t.count += 1


cdef int _table_grow(Table *t) noexcept nogil:
    cdef Table bigger
    cdef Py_ssize_t h
    if _table_init(&bigger, 64 - t.shift + 1) != 0:
        _table_free(&bigger)
        return -1
    for h in range(t.size):
        if t.used[h]:
            _table_add(&bigger, t.keys[h], t.vals[h])
    _table_free(t)
    t[0] = bigger
    return 0


cdef inline void _refresh(Py_ssize_t v, const cnp.int64_t[::1] child_start,
                          const cnp.int64_t[::1] child_count,
                          const double[::1] eps_plus, const double[::1] eps_minus,
                          double[::1] lp, double[::1] lm) noexcept nogil:
    cdef double ap = 1.0, am = 1.0
    cdef Py_ssize_t c
    for c in range(child_start[v], child_start[v] + child_count[v]):
        ap = ap * ((1.0 - eps_plus[c]) * lp[c] + eps_plus[c] * lm[c])
        am = am * ((1.0 - eps_minus[c]) * lp[c] + eps_minus[c] * lm[c])
    lp[v] = ap
    lm[v] = am


def enumerate_configs(
    const cnp.int64_t[::1] parent,
    const cnp.int64_t[::1] child_start,
    const cnp.int64_t[::1] child_count,
    const double[::1] eps_plus,
    const double[::1] eps_minus,
    double pi_plus,
    const cnp.int64_t[::1] leaves,
):
    """Law of the root magnetization by visiting all leaf configurations.

    Configurations are visited in Gray-code order so each step flips one
    leaf and only that leaf's ancestors are recomputed. Returns
    ``(values, probs)`` aggregated on exactly equal float values.
    """
    cdef Py_ssize_t n = parent.shape[0]
    cdef Py_ssize_t n_leaves = leaves.shape[0]
    cdef uint64_t total = (<uint64_t>1) << n_leaves
    cdef uint64_t i
    cdef Py_ssize_t v, k
    cdef double pi_minus = 1.0 - pi_plus
    cdef double p, post, xval
    cdef int failed = 0
    cdef Table acc
    if _table_init(&acc, 12) != 0:
        _table_free(&acc)
        raise MemoryError()
    lp_arr = np.zeros(n, dtype=np.float64)
    lm_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] lp = lp_arr
    cdef double[::1] lm = lm_arr
    with nogil:
        for k in range(n_leaves):
            lp[leaves[k]] = 1.0
            lm[leaves[k]] = 0.0
        for v in range(n - 1, -1, -1):
            if child_count[v] > 0:
                _refresh(v, child_start, child_count, eps_plus, eps_minus, lp, lm)
        i = 0
        while True:
            p = pi_plus * lp[0] + pi_minus * lm[0]
            if p > 0.0:
                post = pi_plus * lp[0] / p
                xval = (post - pi_plus) / pi_minus
                _table_add(&acc, _bits(xval), p)
                if 2 * acc.count > acc.size:
                    if _table_grow(&acc) != 0:
                        failed = 1
                        break
            i += 1
            if i >= total:
                break
            # Gray code: step i flips the leaf at the lowest set bit of i
            k = 0
            while ((i >> k) & 1) == 0:
                k += 1
            v = leaves[k]
            if lp[v] == 1.0:
                lp[v] = 0.0
                lm[v] = 1.0
            else:
                lp[v] = 1.0
                lm[v] = 0.0
            while v > 0:
                v = parent[v]
                _refresh(v, child_start, child_count, eps_plus, eps_minus, lp, lm)
    if failed:
        _table_free(&acc)
        raise MemoryError()
    bits = np.empty(acc.count, dtype=np.uint64)
    probs = np.empty(acc.count, dtype=np.float64)
    cdef uint64_t[::1] bb = bits
    cdef double[::1] pp = probs
    k = 0
    for v in range(acc.size):
        if acc.used[v]:
            bb[k] = acc.keys[v]
            pp[k] = acc.vals[v]
            k += 1
    _table_free(&acc)
    values = bits.view(np.float64)
    order = np.argsort(values, kind="stable")
    return values[order], probs[order]
