# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Must stay behaviour-identical to ``_pure``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, isfinite, sqrt
from libc.stdlib cimport calloc, malloc, free, strtod
from libc.string cimport memchr, memcpy
from cpython.unicode cimport PyUnicode_DecodeUTF8
from cpython.ref cimport PyObject, Py_INCREF, Py_XDECREF
from libc.stdint cimport uint64_t
from libc.string cimport memcmp

cdef extern from "Python.h":
    int PyUnicode_IS_COMPACT_ASCII(object o)
    void* PyUnicode_DATA(object o)
    Py_ssize_t PyUnicode_GET_LENGTH(object o)

cnp.import_array()

cdef enum:
    K_INT = 105    # 'i'
    K_FLOAT = 102  # 'f'
    K_STR = 115    # 's'
    K_SKIP = 120   # 'x': field must exist but is not converted

cdef long long INT64_MAX = 9223372036854775807


cdef inline bint _parse_int(const unsigned char* p, Py_ssize_t n, long long* out) nogil:
    cdef Py_ssize_t i = 0
    cdef bint neg = False
    cdef unsigned long long acc = 0
    cdef unsigned long long limit
    cdef unsigned int d
    if n == 0:
        return False
    if p[0] == 45 or p[0] == 43:  # '-' '+'
        neg = p[0] == 45
        i = 1
        if n == 1:
            return False
    limit = <unsigned long long>INT64_MAX + (1 if neg else 0)
    while i < n:
        d = p[i] - 48
        if d > 9:
            return False
        if acc > (limit - d) // 10:
            return False
        acc = acc * 10 + d
        i += 1
    if neg:
        out[0] = -(<long long>(acc - 1)) - 1 if acc > 0 else 0
    else:
        out[0] = <long long>acc
    return True


cdef double[23] POW10 = [1e0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7, 1e8, 1e9, 1e10, 1e11, 1e12, 1e13, 1e14,
                         1e15, 1e16, 1e17, 1e18, 1e19, 1e20, 1e21, 1e22]


cdef inline bint _fast_float(const unsigned char* p, Py_ssize_t n, double* out) nogil:
    # [-+]digits[.digits] with mantissa < 2**53 and <= 22 decimals: both the
    # mantissa and 10**k are exact doubles, so one division rounds correctly
    cdef Py_ssize_t i = 0, frac = -1, ndig = 0
    cdef bint neg = False
    cdef unsigned long long m = 0
    cdef unsigned int d
    if p[0] == 45 or p[0] == 43:
        neg = p[0] == 45
        i = 1
    while i < n:
        d = p[i] - 48
        if d <= 9:
            m = m * 10 + d
            ndig += 1
            if m >= 9007199254740992ULL:
                return False
            if frac >= 0:
                frac += 1
        elif p[i] == 46 and frac < 0:
            frac = 0
        else:
            return False
        i += 1
    if ndig == 0 or frac > 22:
        return False
    out[0] = (<double>m) / POW10[frac] if frac > 0 else <double>m
    if neg:
        out[0] = -out[0]
    return True


cdef inline bint _parse_float(const unsigned char* p, Py_ssize_t n, double* out) nogil:
    cdef char small[64]
    cdef char* tmp
    cdef char* end
    cdef Py_ssize_t i
    cdef double v
    cdef unsigned char c
    if n == 0:
        return False
    if _fast_float(p, n, out):
        return True
    for i in range(n):
        c = p[i]
        # strtod accepts leading blanks and hex floats; the text format does not
        if c == 32 or c == 9 or c == 13 or c == 11 or c == 12 or c == 10:
            return False
        if c == 120 or c == 88 or c == 95:  # 'x' 'X' '_'
            return False
    if n < 64:
        tmp = small
    else:
        tmp = <char*>malloc(n + 1)
        if tmp == NULL:
            return False
    memcpy(tmp, p, n)
    tmp[n] = 0
    v = strtod(tmp, &end)
    i = end - tmp
    if tmp != small:
        free(tmp)
    if i != n or not isfinite(v):
        return False
    out[0] = v
    return True


# per-column string interning: text columns (addresses, tokens) repeat a lot
DEF INTERN_SLOTS = 4096


cdef inline uint64_t _fnv(const unsigned char* p, Py_ssize_t n) nogil:
    cdef uint64_t h = 14695981039346656037ULL
    cdef Py_ssize_t i
    for i in range(n):
        h = (h ^ p[i]) * 1099511628211ULL
    return h | 1


cdef object _text(const unsigned char* p, Py_ssize_t n, uint64_t* hashes, PyObject** slots,
                  Py_ssize_t* used, list keep):
    cdef uint64_t h = _fnv(p, n)
    cdef Py_ssize_t idx = h & (INTERN_SLOTS - 1)
    cdef object o
    while hashes[idx] != 0:
        if hashes[idx] == h:
            o = <object>slots[idx]
            if PyUnicode_GET_LENGTH(o) == n and memcmp(PyUnicode_DATA(o), p, n) == 0:
                return o
        idx = (idx + 1) & (INTERN_SLOTS - 1)
    o = PyUnicode_DecodeUTF8(<const char*>p, n, NULL)
    if used[0] < INTERN_SLOTS // 2 and PyUnicode_IS_COMPACT_ASCII(o):
        hashes[idx] = h
        slots[idx] = <PyObject*>o
        keep.append(o)
        used[0] += 1
    return o


def parse_block(const unsigned char[::1] buf, bytes kinds, bint skip_bad, Py_ssize_t line_offset):
    """Parse complete tab-separated lines into typed columns.

    ``kinds`` holds one code per column: ``i`` int64, ``f`` float64, ``s`` text
    (object array),
    ``x`` skipped (``None`` is returned in its place). Returns ``(columns,
    absent, nrows, skipped, error, nlines)``; ``error`` is ``None`` or ``(line_no,
    column_index, reason)`` with column_index -1 for arity errors.
    """
    cdef Py_ssize_t n = buf.shape[0]
    cdef Py_ssize_t ncols = len(kinds)
    cdef const unsigned char* data = &buf[0] if n > 0 else NULL
    cdef Py_ssize_t nlines = 0, i, j, k, pos, line_start, line_end, nf, row = 0
    cdef Py_ssize_t skipped = 0, line_no
    cdef const unsigned char* kk = kinds
    cdef Py_ssize_t* fstart
    cdef Py_ssize_t* fend
    cdef long long* itmp
    cdef double* ftmp
    cdef bint bad
    cdef long long iv
    cdef double fv
    cdef object error = None

    cdef const unsigned char* hit
    if n > 0:
        pos = 0
        while pos < n:
            hit = <const unsigned char*>memchr(data + pos, 10, n - pos)
            if hit == NULL:
                break
            nlines += 1
            pos = hit - data + 1
        if data[n - 1] != 10:
            nlines += 1

    columns = []
    absent = []
    cdef list int_cols = [None] * ncols
    cdef list flt_cols = [None] * ncols
    cdef list str_cols = [None] * ncols
    cdef list mask_cols = [None] * ncols
    cdef cnp.ndarray arr
    # raw data pointers, fetched once per block
    cdef char** mptr = <char**>malloc((ncols + 1) * sizeof(char*))
    cdef char** vptr = <char**>malloc((ncols + 1) * sizeof(char*))
    for j in range(ncols):
        arr = np.zeros(nlines, dtype=np.bool_)
        mask_cols[j] = arr
        mptr[j] = <char*>cnp.PyArray_DATA(arr)
        vptr[j] = NULL
        if kk[j] == K_INT:
            arr = np.zeros(nlines, dtype=np.int64)
            int_cols[j] = arr
            vptr[j] = <char*>cnp.PyArray_DATA(arr)
        elif kk[j] == K_FLOAT:
            arr = np.zeros(nlines, dtype=np.float64)
            flt_cols[j] = arr
            vptr[j] = <char*>cnp.PyArray_DATA(arr)
        elif kk[j] == K_STR:
            arr = np.empty(nlines, dtype=object)
            str_cols[j] = arr
            vptr[j] = <char*>cnp.PyArray_DATA(arr)

    fstart = <Py_ssize_t*>malloc((ncols + 1) * sizeof(Py_ssize_t))
    fend = <Py_ssize_t*>malloc((ncols + 1) * sizeof(Py_ssize_t))
    itmp = <long long*>malloc((ncols + 1) * sizeof(long long))
    ftmp = <double*>malloc((ncols + 1) * sizeof(double))
    cdef list strtmp = [None] * ncols
    cdef uint64_t* ihash = <uint64_t*>calloc((ncols + 1) * INTERN_SLOTS, sizeof(uint64_t))
    cdef PyObject** islot = <PyObject**>malloc((ncols + 1) * INTERN_SLOTS * sizeof(PyObject*))
    cdef Py_ssize_t* iused = <Py_ssize_t*>calloc(ncols + 1, sizeof(Py_ssize_t))
    cdef list keep = []
    cdef object sval
    cdef PyObject** optr
    try:
        pos = 0
        line_no = line_offset - 1
        while pos < n:
            line_start = pos
            hit = <const unsigned char*>memchr(data + pos, 10, n - pos)
            pos = n if hit == NULL else hit - data
            line_end = pos
            pos += 1
            line_no += 1
            if line_end == line_start:
                continue
            # split into fields
            nf = 0
            k = line_start
            fstart[0] = line_start
            bad = False
            for i in range(line_start, line_end):
                if data[i] == 9:
                    if nf < ncols:
                        fend[nf] = i
                        if nf + 1 < ncols:
                            fstart[nf + 1] = i + 1
                    nf += 1
            if nf < ncols:
                fend[nf] = line_end
            nf += 1
            if nf != ncols:
                if skip_bad:
                    skipped += 1
                    continue
                error = (line_no, -1, f"expected {ncols} fields, got {nf}")
                break
            for j in range(ncols):
                k = fend[j] - fstart[j]
                if k == 0 or kk[j] == K_SKIP:
                    continue
                if kk[j] == K_INT:
                    if not _parse_int(data + fstart[j], k, &itmp[j]):
                        bad = True
                        if not skip_bad:
                            error = (line_no, j, "invalid integer " + repr(bytes(buf[fstart[j]:fend[j]]).decode("utf-8", "replace")))
                        break
                elif kk[j] == K_FLOAT:
                    if not _parse_float(data + fstart[j], k, &ftmp[j]):
                        bad = True
                        if not skip_bad:
                            error = (line_no, j, "invalid float " + repr(bytes(buf[fstart[j]:fend[j]]).decode("utf-8", "replace")))
                        break
                else:
                    try:
                        strtmp[j] = _text(data + fstart[j], k, ihash + j * INTERN_SLOTS, islot + j * INTERN_SLOTS,
                                          iused + j, keep)
                    except UnicodeDecodeError:
                        bad = True
                        if not skip_bad:
                            error = (line_no, j, "invalid UTF-8")
                        break
            if bad:
                if skip_bad:
                    skipped += 1
                    continue
                break
            for j in range(ncols):
                if kk[j] == K_SKIP:
                    continue
                k = fend[j] - fstart[j]
                if kk[j] == K_STR:
                    sval = "" if k == 0 else strtmp[j]
                    optr = <PyObject**>vptr[j]
                    Py_INCREF(sval)
                    Py_XDECREF(optr[row])
                    optr[row] = <PyObject*>sval
                    if k == 0:
                        (<cnp.npy_bool*>mptr[j])[row] = 1
                elif k == 0:
                    (<cnp.npy_bool*>mptr[j])[row] = 1
                elif kk[j] == K_INT:
                    (<cnp.int64_t*>vptr[j])[row] = itmp[j]
                else:
                    (<cnp.float64_t*>vptr[j])[row] = ftmp[j]
            row += 1
    finally:
        free(fstart)
        free(fend)
        free(itmp)
        free(ftmp)
        free(mptr)
        free(vptr)
        free(ihash)
        free(islot)
        free(iused)

    for j in range(ncols):
        if kk[j] == K_INT:
            columns.append(int_cols[j][:row])
        elif kk[j] == K_FLOAT:
            columns.append(flt_cols[j][:row])
        elif kk[j] == K_STR:
            columns.append(str_cols[j][:row])
        else:
            columns.append(None)
            absent.append(None)
            continue
        absent.append(mask_cols[j][:row])
    return columns, absent, row, skipped, error, nlines


def reconstruct(cnp.float64_t[::1] starts, cnp.float64_t[::1] ends, cnp.float64_t[::1] nbytes,
                double t0, double resolution, Py_ssize_t nbins):
    """Spread each flow's bits uniformly over its lifetime; returns mean bits/s per bin."""
    cdef Py_ssize_t n = starts.shape[0], f, i0, i1
    cdef double s, e, d, rate, rs, re, x
    diff_arr = np.zeros(nbins + 2, dtype=np.float64)
    cdef cnp.float64_t[::1] diff = diff_arr
    for f in range(n):
        s = starts[f]
        e = ends[f]
        d = e - s
        if d < 0:
            raise ValueError(f"flow {f} has negative duration ({s} > {e})")
        rs = (s - t0) / resolution
        i0 = <Py_ssize_t>floor(rs)
        if i0 < 0:
            i0 = 0
        if i0 >= nbins:
            i0 = nbins - 1
        if d == 0:
            x = 8.0 * nbytes[f] / resolution
            diff[i0] += x
            diff[i0 + 1] -= x
            continue
        rate = 8.0 * nbytes[f] / d
        re = (e - t0) / resolution
        i1 = <Py_ssize_t>floor(re)
        if i1 <= i0:
            x = 8.0 * nbytes[f] / resolution
            diff[i0] += x
            diff[i0 + 1] -= x
            continue
        x = rate * ((i0 + 1) - rs)
        diff[i0] += x
        diff[i0 + 1] -= x
        diff[i0 + 1] += rate
        diff[i1] -= rate
        if i1 < nbins:
            x = rate * (re - i1)
            diff[i1] += x
            diff[i1 + 1] -= x
    return np.cumsum(diff_arr[:nbins])


def rolling_cv(cnp.float64_t[::1] values, Py_ssize_t window):
    """Centered-window stddev/mean with edge truncation; 0 where the window mean is 0."""
    cdef Py_ssize_t n = values.shape[0], i, j, lo, hi, half = window // 2
    cdef double acc, mean, dev, var, m
    out_arr = np.zeros(n, dtype=np.float64)
    cdef cnp.float64_t[::1] out = out_arr
    with nogil:
        for i in range(n):
            lo = i - half
            if lo < 0:
                lo = 0
            hi = i + half + 1
            if hi > n:
                hi = n
            m = hi - lo
            acc = 0.0
            for j in range(lo, hi):
                acc = acc + values[j]
            mean = acc / m
            if mean == 0.0:
                out[i] = 0.0
                continue
            var = 0.0
            for j in range(lo, hi):
                dev = values[j] - mean
                var = var + dev * dev
            out[i] = sqrt(var / m) / mean
    return out_arr
