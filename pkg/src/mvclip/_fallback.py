"""Pure numpy implementations of the compiled kernels.

``trace`` evaluates the same floating-point expressions, in the same order,
as ``_kernels.trace``; both backends must emit identical bytes.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import erfc

_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
HIT_EPS = 1e-9
TINY = 1e-12

EMPTY, SPHERES, CUBE, CYLINDER, CONE = range(5)


def gelu_forward(x: np.ndarray, out: np.ndarray, cdf: np.ndarray) -> None:
    x64 = x.astype(np.float64)
    c = 0.5 * erfc(-x64 * _SQRT1_2)
    cdf[...] = c
    out[...] = x64 * c


def gelu_backward(x: np.ndarray, cdf: np.ndarray, g: np.ndarray, out: np.ndarray) -> None:
    v = x.astype(np.float64)
    out[...] = g * (cdf + v * np.exp(-0.5 * v * v) * _INV_SQRT_2PI)


def _rotate(R, m0, m1, m2):
    return (R[0, 0] * m0 + R[0, 1] * m1 + R[0, 2] * m2,
            R[1, 0] * m0 + R[1, 1] * m1 + R[1, 2] * m2,
            R[2, 0] * m0 + R[2, 1] * m1 + R[2, 2] * m2)


def trace(dirs, kind, spheres, R, origin, size, color, ambient, diffuse, light) -> np.ndarray:
    P = dirs.shape[0]
    out = np.full((P, 3), 255, dtype=np.uint8)
    if kind == EMPTY:
        return out
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    best = np.full(P, np.inf)
    hit = np.zeros(P, dtype=bool)
    n0 = np.zeros(P)
    n1 = np.zeros(P)
    n2 = np.zeros(P)
    ox, oy, oz = float(origin[0]), float(origin[1]), float(origin[2])

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if kind == SPHERES:
            for cx, cy, cz, r, cc in spheres:
                b = dx * cx + dy * cy + dz * cz
                disc = b * b - cc
                ok = disc >= 0.0
                t = b - np.sqrt(np.where(ok, disc, 0.0))
                upd = ok & (t > HIT_EPS) & (t < best)
                best = np.where(upd, t, best)
                hit |= upd
                n0 = np.where(upd, (t * dx - cx) / r, n0)
                n1 = np.where(upd, (t * dy - cy) / r, n1)
                n2 = np.where(upd, (t * dz - cz) / r, n2)
        else:
            lx = R[0, 0] * dx + R[1, 0] * dy + R[2, 0] * dz
            ly = R[0, 1] * dx + R[1, 1] * dy + R[2, 1] * dz
            lz = R[0, 2] * dx + R[1, 2] * dy + R[2, 2] * dz
            m0 = np.zeros(P)
            m1 = np.zeros(P)
            m2 = np.zeros(P)
            if kind == CUBE:
                h = float(size[0])
                tmin = np.full(P, -np.inf)
                tmax = np.full(P, np.inf)
                axis = np.full(P, -1)
                for a, (o, d) in enumerate(((ox, lx), (oy, ly), (oz, lz))):
                    zero = d == 0.0
                    t1 = (-h - o) / d
                    t2 = (h - o) / d
                    swap = t1 < t2
                    lo = np.where(swap, t1, t2)
                    hi = np.where(swap, t2, t1)
                    upd = ~zero & (lo > tmin)
                    tmin = np.where(upd, lo, tmin)
                    axis = np.where(upd, a, axis)
                    tmax = np.where(~zero & (hi < tmax), hi, tmax)
                    if o < -h or o > h:
                        tmin = np.where(zero, np.inf, tmin)
                        tmax = np.where(zero, -np.inf, tmax)
                hit = (axis >= 0) & (tmin <= tmax) & (tmin > HIT_EPS)
                m0 = np.where(axis == 0, np.where(lx > 0.0, -1.0, 1.0), 0.0)
                m1 = np.where(axis == 1, np.where(ly > 0.0, -1.0, 1.0), 0.0)
                m2 = np.where(axis == 2, np.where(lz > 0.0, -1.0, 1.0), 0.0)
            elif kind == CYLINDER:
                rho, h = float(size[0]), float(size[1])
                A = lx * lx + ly * ly
                okA = A > TINY
                B = ox * lx + oy * ly
                C = ox * ox + oy * oy - rho * rho
                disc = B * B - A * C
                ok = okA & (disc >= 0.0)
                t = (-B - np.sqrt(np.where(ok, disc, 0.0))) / A
                z = oz + t * lz
                side = ok & (t > HIT_EPS) & (z >= -h) & (z <= h)
                best = np.where(side, t, best)
                hit |= side
                m0 = np.where(side, (ox + t * lx) / rho, m0)
                m1 = np.where(side, (oy + t * ly) / rho, m1)
                nz = lz != 0.0
                for zc, sign in ((h, 1.0), (-h, -1.0)):
                    t = (zc - oz) / lz
                    x = ox + t * lx
                    y = oy + t * ly
                    cap = nz & (t > HIT_EPS) & (t < best) & (x * x + y * y <= rho * rho)
                    best = np.where(cap, t, best)
                    hit |= cap
                    m0 = np.where(cap, 0.0, m0)
                    m1 = np.where(cap, 0.0, m1)
                    m2 = np.where(cap, sign, m2)
            elif kind == CONE:
                rho, h, kk = float(size[0]), float(size[1]), float(size[2])
                w0 = h - oz
                A = lx * lx + ly * ly - kk * lz * lz
                B = ox * lx + oy * ly + kk * w0 * lz
                C = ox * ox + oy * oy - kk * w0 * w0
                quad = (A > TINY) | (A < -TINY)
                disc = B * B - A * C
                ok = quad & (disc >= 0.0)
                sq = np.sqrt(np.where(ok, disc, 0.0))
                r1 = (-B - sq) / A
                r2 = (-B + sq) / A
                swap = r2 < r1
                t1 = np.where(ok, np.where(swap, r2, r1), np.inf)
                t2 = np.where(ok, np.where(swap, r1, r2), np.inf)
                lin = ~quad & ((B > TINY) | (B < -TINY))
                t1 = np.where(lin, -C / (2.0 * B), t1)
                for t in (t1, t2):
                    z = oz + t * lz
                    upd = (t > HIT_EPS) & (t < best) & (z >= -h) & (z <= h)
                    x = ox + t * lx
                    y = oy + t * ly
                    g2 = kk * (h - z)
                    nl = np.sqrt(x * x + y * y + g2 * g2)
                    best = np.where(upd, t, best)
                    hit |= upd
                    m0 = np.where(upd, x / nl, m0)
                    m1 = np.where(upd, y / nl, m1)
                    m2 = np.where(upd, g2 / nl, m2)
                nz = lz != 0.0
                t = (-h - oz) / lz
                x = ox + t * lx
                y = oy + t * ly
                cap = nz & (t > HIT_EPS) & (t < best) & (x * x + y * y <= rho * rho)
                best = np.where(cap, t, best)
                hit |= cap
                m0 = np.where(cap, 0.0, m0)
                m1 = np.where(cap, 0.0, m1)
                m2 = np.where(cap, -1.0, m2)
            else:
                raise ValueError(f"unknown primitive kind {kind}")
            n0, n1, n2 = _rotate(R, m0, m1, m2)

        lam = n0 * light[0] + n1 * light[1] + n2 * light[2]
        lam = np.where(lam < 0.0, 0.0, lam)
        val = ambient + diffuse * lam
        for c in range(3):
            ch = np.floor(color[c] * val * 255.0 + 0.5)
            ch = np.clip(ch, 0.0, 255.0)
            out[:, c] = np.where(hit, ch, 255.0).astype(np.uint8)
    return out
