# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: exact GELU and the analytic primitive ray tracer.

The ray tracer mirrors ``_fallback.trace`` operation for operation so the
two backends produce identical bytes; keep them in sync.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport erfc, exp, sqrt, floor, INFINITY

cnp.import_array()

ctypedef fused real:
    float
    double

cdef double SQRT1_2 = 0.7071067811865476
cdef double INV_SQRT_2PI = 0.3989422804014327
cdef double HIT_EPS = 1e-9
cdef double TINY = 1e-12


def gelu_forward(const real[::1] x, real[::1] out, real[::1] cdf):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double v, c
    with nogil:
        for i in range(n):
            v = x[i]
            c = 0.5 * erfc(-v * SQRT1_2)
            cdf[i] = <real>c
            out[i] = <real>(v * c)


def gelu_backward(const real[::1] x, const real[::1] cdf, const real[::1] g, real[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double v
    with nogil:
        for i in range(n):
            v = x[i]
            out[i] = <real>(g[i] * (cdf[i] + v * exp(-0.5 * v * v) * INV_SQRT_2PI))


# primitive kinds (see synth.render)
cdef enum:
    EMPTY = 0
    SPHERES = 1
    CUBE = 2
    CYLINDER = 3
    CONE = 4


cdef inline void _to_local(const double[:, ::1] R, double d0, double d1, double d2,
                           double* l0, double* l1, double* l2) noexcept nogil:
    l0[0] = R[0, 0] * d0 + R[1, 0] * d1 + R[2, 0] * d2
    l1[0] = R[0, 1] * d0 + R[1, 1] * d1 + R[2, 1] * d2
    l2[0] = R[0, 2] * d0 + R[1, 2] * d1 + R[2, 2] * d2


def trace(const double[:, ::1] dirs, int kind, const double[:, ::1] spheres, const double[:, ::1] R,
          const double[::1] origin, const double[::1] size, const double[::1] color,
          double ambient, double diffuse, const double[::1] light):
    """Render one view; returns uint8 (P, 3)."""
    cdef Py_ssize_t P = dirs.shape[0], nsph = spheres.shape[0]
    out_arr = np.full((P, 3), 255, dtype=np.uint8)
    cdef unsigned char[:, ::1] out = out_arr
    cdef Py_ssize_t p, s, a, c
    cdef double dx, dy, dz, b, cc, disc, sq, t, best
    cdef double lx, ly, lz, ox, oy, oz, o, d, h, t1, t2, lo, hi, tmin, tmax
    cdef double rho, kk, w0, A, B, C, x, y, z
    cdef double n0, n1, n2, m0, m1, m2, nl, lam, val, ch
    cdef int hit, axis
    cdef double ld[3]
    cdef double lo_[3]
    if kind == EMPTY:
        return out_arr
    ox = origin[0]
    oy = origin[1]
    oz = origin[2]
    with nogil:
        for p in range(P):
            dx = dirs[p, 0]
            dy = dirs[p, 1]
            dz = dirs[p, 2]
            hit = 0
            best = INFINITY
            n0 = 0.0
            n1 = 0.0
            n2 = 0.0
            if kind == SPHERES:
                for s in range(nsph):
                    b = dx * spheres[s, 0] + dy * spheres[s, 1] + dz * spheres[s, 2]
                    disc = b * b - spheres[s, 4]
                    if disc >= 0.0:
                        sq = sqrt(disc)
                        t = b - sq
                        if t > HIT_EPS and t < best:
                            best = t
                            hit = 1
                            n0 = (t * dx - spheres[s, 0]) / spheres[s, 3]
                            n1 = (t * dy - spheres[s, 1]) / spheres[s, 3]
                            n2 = (t * dz - spheres[s, 2]) / spheres[s, 3]
            else:
                _to_local(R, dx, dy, dz, &lx, &ly, &lz)
                if kind == CUBE:
                    h = size[0]
                    ld[0] = lx
                    ld[1] = ly
                    ld[2] = lz
                    lo_[0] = ox
                    lo_[1] = oy
                    lo_[2] = oz
                    tmin = -INFINITY
                    tmax = INFINITY
                    axis = -1
                    for a in range(3):
                        o = lo_[a]
                        d = ld[a]
                        if d == 0.0:
                            if o < -h or o > h:
                                tmin = INFINITY
                                tmax = -INFINITY
                            continue
                        t1 = (-h - o) / d
                        t2 = (h - o) / d
                        lo = t1 if t1 < t2 else t2
                        hi = t2 if t1 < t2 else t1
                        if lo > tmin:
                            tmin = lo
                            axis = a
                        if hi < tmax:
                            tmax = hi
                    if axis >= 0 and tmin <= tmax and tmin > HIT_EPS:
                        hit = 1
                        m0 = 0.0
                        m1 = 0.0
                        m2 = 0.0
                        if axis == 0:
                            m0 = -1.0 if lx > 0.0 else 1.0
                        elif axis == 1:
                            m1 = -1.0 if ly > 0.0 else 1.0
                        else:
                            m2 = -1.0 if lz > 0.0 else 1.0
                        n0 = R[0, 0] * m0 + R[0, 1] * m1 + R[0, 2] * m2
                        n1 = R[1, 0] * m0 + R[1, 1] * m1 + R[1, 2] * m2
                        n2 = R[2, 0] * m0 + R[2, 1] * m1 + R[2, 2] * m2
                elif kind == CYLINDER:
                    rho = size[0]
                    h = size[1]
                    m0 = 0.0
                    m1 = 0.0
                    m2 = 0.0
                    A = lx * lx + ly * ly
                    if A > TINY:
                        B = ox * lx + oy * ly
                        C = ox * ox + oy * oy - rho * rho
                        disc = B * B - A * C
                        if disc >= 0.0:
                            sq = sqrt(disc)
                            t = (-B - sq) / A
                            z = oz + t * lz
                            if t > HIT_EPS and z >= -h and z <= h:
                                best = t
                                hit = 1
                                m0 = (ox + t * lx) / rho
                                m1 = (oy + t * ly) / rho
                                m2 = 0.0
                    if lz != 0.0:
                        for c in range(2):
                            z = h if c == 0 else -h
                            t = (z - oz) / lz
                            if t > HIT_EPS and t < best:
                                x = ox + t * lx
                                y = oy + t * ly
                                if x * x + y * y <= rho * rho:
                                    best = t
                                    hit = 1
                                    m0 = 0.0
                                    m1 = 0.0
                                    m2 = 1.0 if c == 0 else -1.0
                    if hit:
                        n0 = R[0, 0] * m0 + R[0, 1] * m1 + R[0, 2] * m2
                        n1 = R[1, 0] * m0 + R[1, 1] * m1 + R[1, 2] * m2
                        n2 = R[2, 0] * m0 + R[2, 1] * m1 + R[2, 2] * m2
                elif kind == CONE:
                    rho = size[0]
                    h = size[1]
                    kk = size[2]
                    m0 = 0.0
                    m1 = 0.0
                    m2 = 0.0
                    w0 = h - oz
                    A = lx * lx + ly * ly - kk * lz * lz
                    B = ox * lx + oy * ly + kk * w0 * lz
                    C = ox * ox + oy * oy - kk * w0 * w0
                    t1 = INFINITY
                    t2 = INFINITY
                    if A > TINY or A < -TINY:
                        disc = B * B - A * C
                        if disc >= 0.0:
                            sq = sqrt(disc)
                            t1 = (-B - sq) / A
                            t2 = (-B + sq) / A
                            if t2 < t1:
                                t = t1
                                t1 = t2
                                t2 = t
                    elif B > TINY or B < -TINY:
                        t1 = -C / (2.0 * B)
                    for c in range(2):
                        t = t1 if c == 0 else t2
                        if t > HIT_EPS and t < best:
                            z = oz + t * lz
                            if z >= -h and z <= h:
                                best = t
                                hit = 1
                                x = ox + t * lx
                                y = oy + t * ly
                                m0 = x
                                m1 = y
                                m2 = kk * (h - z)
                                nl = sqrt(m0 * m0 + m1 * m1 + m2 * m2)
                                m0 = m0 / nl
                                m1 = m1 / nl
                                m2 = m2 / nl
                    if lz != 0.0:
                        t = (-h - oz) / lz
                        if t > HIT_EPS and t < best:
                            x = ox + t * lx
                            y = oy + t * ly
                            if x * x + y * y <= rho * rho:
                                best = t
                                hit = 1
                                m0 = 0.0
                                m1 = 0.0
                                m2 = -1.0
                    if hit:
                        n0 = R[0, 0] * m0 + R[0, 1] * m1 + R[0, 2] * m2
                        n1 = R[1, 0] * m0 + R[1, 1] * m1 + R[1, 2] * m2
                        n2 = R[2, 0] * m0 + R[2, 1] * m1 + R[2, 2] * m2
            if hit:
                lam = n0 * light[0] + n1 * light[1] + n2 * light[2]
                if lam < 0.0:
                    lam = 0.0
                val = ambient + diffuse * lam
                for c in range(3):
                    ch = floor(color[c] * val * 255.0 + 0.5)
                    if ch < 0.0:
                        ch = 0.0
                    if ch > 255.0:
                        ch = 255.0
                    out[p, c] = <unsigned char>ch
    return out_arr
