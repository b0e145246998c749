"""Solid-harmonic primitives shared by every expansion operator.

Conventions (fixed here once, used everywhere):

* Y_l^m(theta, phi) = sqrt((l-|m|)!/(l+|m|)!) * P_l^|m|(cos theta) * e^{i m phi}
  with Condon-Shortley-free associated Legendre functions, so
  Y_l^{-m} = conj(Y_l^m).
* Coefficients are stored flat with index l*l + l + m for 0 <= l < p.
* A_n^m = (-1)^n / sqrt((n-m)! (n+m)!).
* The Coulomb constant is 1.
"""

import math

import numpy as np
from numba import njit

IPOW = np.array([1.0 + 0.0j, 1.0j, -1.0 + 0.0j, -1.0j])


def lm_index(l, m):
    return l * l + l + m


def num_coefficients(p):
    return p * p


def build_a_table(p):
    """A_n^m for degrees up to 2p-2 (the m2l kernel needs degree j+n)."""
    lmax = 2 * p - 2
    table = np.zeros((lmax + 1, 2 * lmax + 1))
    for n in range(lmax + 1):
        for m in range(-n, n + 1):
            table[n, m + lmax] = (-1.0) ** n * math.exp(
                -0.5 * (math.lgamma(n - m + 1) + math.lgamma(n + m + 1))
            )
    return table


@njit(cache=True, nogil=True)
def ylm_fill(lmax, dx, dy, dz, pscr, out):
    """Fill out[0:(lmax+1)**2] with Y_l^m of the direction of (dx, dy, dz).

    Returns the vector length rho. pscr is an (lmax+1, lmax+1) float scratch
    for the Legendre recurrence. A zero vector yields Y_0^0 = 1 with the polar
    direction for higher degrees (callers multiply those by rho^l = 0).
    """
    rho = np.sqrt(dx * dx + dy * dy + dz * dz)
    if rho > 0.0:
        ct = dz / rho
        if ct > 1.0:
            ct = 1.0
        elif ct < -1.0:
            ct = -1.0
    else:
        ct = 1.0
    st = np.sqrt(1.0 - ct * ct)
    phi = math.atan2(dy, dx)

    pscr[0, 0] = 1.0
    for m in range(1, lmax + 1):
        pscr[m, m] = (2.0 * m - 1.0) * st * pscr[m - 1, m - 1]
    for m in range(lmax):
        pscr[m + 1, m] = (2.0 * m + 1.0) * ct * pscr[m, m]
    for m in range(lmax + 1):
        for l in range(m + 2, lmax + 1):
            pscr[l, m] = ((2.0 * l - 1.0) * ct * pscr[l - 1, m]
                          - (l + m - 1.0) * pscr[l - 2, m]) / (l - m)

    for l in range(lmax + 1):
        out[l * l + l] = pscr[l, 0] + 0.0j
        norm = 1.0
        for m in range(1, l + 1):
            norm /= math.sqrt((l - m + 1.0) * (l + m))
            c = math.cos(m * phi)
            s = math.sin(m * phi)
            val = norm * pscr[l, m]
            out[l * l + l + m] = complex(val * c, val * s)
            out[l * l + l - m] = complex(val * c, -val * s)
    return rho


@njit(cache=True, nogil=True)
def p2m_accum(q, rho, y, p, out):
    """Add a point charge's multipole moments: M_l^m += q rho^l Y_l^{-m}."""
    rl = q
    for l in range(p):
        base = l * l + l
        for m in range(-l, l + 1):
            out[base + m] += rl * y[base - m]
        rl *= rho


@njit(cache=True, nogil=True)
def eval_multipole_core(coeffs, y, rho, p):
    """Far-field evaluation: sum over l, m of M_l^m Y_l^m / rho^{l+1}."""
    acc = 0.0j
    rinv = 1.0 / rho
    rp = rinv
    for l in range(p):
        base = l * l + l
        for m in range(-l, l + 1):
            acc += coeffs[base + m] * y[base + m] * rp
        rp *= rinv
    return acc


@njit(cache=True, nogil=True)
def eval_local_core(coeffs, y, rho, p):
    """Interior evaluation: sum over l, m of L_l^m rho^l Y_l^m."""
    acc = 0.0j
    rp = 1.0
    for l in range(p):
        base = l * l + l
        for m in range(-l, l + 1):
            acc += coeffs[base + m] * y[base + m] * rp
        rp *= rho
    return acc


@njit(cache=True, nogil=True)
def m2m_core(src, y, rho, a, lma, p, out):
    """Re-centre a multipole expansion along the shift whose harmonics are ``y``."""
    rho_pow = np.empty(p)
    rho_pow[0] = 1.0
    for n in range(1, p):
        rho_pow[n] = rho_pow[n - 1] * rho
    for j in range(p):
        for k in range(-j, j + 1):
            acc = 0.0j
            inv_ajk = 1.0 / a[j, k + lma]
            for n in range(j + 1):
                jn = j - n
                lo = -n if -n > k - jn else k - jn
                hi = n if n < k + jn else k + jn
                for m in range(lo, hi + 1):
                    e = abs(k) - abs(m) - abs(k - m)
                    acc += (src[jn * jn + jn + k - m]
                            * IPOW[e % 4]
                            * a[n, m + lma] * a[jn, (k - m) + lma]
                            * rho_pow[n] * y[n * n + n - m]) * inv_ajk
            out[j * j + j + k] += acc


@njit(cache=True, nogil=True)
def m2l_core(src, y2, rinv_pow, a, lma, p, out):
    """Convert a multipole into a local expansion across the shift.

    ``y2`` holds harmonics up to degree 2p-2 of the source-minus-target
    direction, ``rinv_pow[d]`` = rho^-(d+1).
    """
    for j in range(p):
        for k in range(-j, j + 1):
            acc = 0.0j
            ajk = a[j, k + lma]
            for n in range(p):
                sgn = -1.0 if (n & 1) else 1.0
                rp = rinv_pow[j + n]
                jn = j + n
                for m in range(-n, n + 1):
                    e = abs(m - k) - abs(k) - abs(m)
                    acc += (src[n * n + n + m]
                            * IPOW[e % 4]
                            * a[n, m + lma] * ajk
                            * y2[jn * jn + jn + m - k]
                            * sgn * rp / a[jn, (m - k) + lma])
            out[j * j + j + k] += acc


def m2l_source_scale(p, a_tab):
    """Source-side prefactors S[n,m] = A_n^m (-1)^n i^{-|m|} for the fast m2l path."""
    lma = 2 * p - 2
    scale = np.empty(p * p, dtype=np.complex128)
    for n in range(p):
        for m in range(-n, n + 1):
            scale[n * n + n + m] = (a_tab[n, m + lma] * (-1.0) ** n
                                    * IPOW[(-abs(m)) % 4])
    return scale


def m2l_target_scale(p, a_tab):
    """Target-side prefactors T[j,k] = A_j^k i^{-|k|} for the fast m2l path."""
    lma = 2 * p - 2
    scale = np.empty(p * p, dtype=np.complex128)
    for j in range(p):
        for k in range(-j, j + 1):
            scale[j * j + j + k] = a_tab[j, k + lma] * IPOW[(-abs(k)) % 4]
    return scale


def m2l_g_table(p, y2, rinv_pow, a_tab):
    """Pair-side kernel G[d,mu] = i^{|mu|} Y_d^mu rho^-(d+1) / A_d^mu.

    With the source/target prefactors above, a multipole-to-local translation
    becomes L[j,k] += T[j,k] * sum_{n,m} S[n,m] M[n,m] G[j+n, m-k]; the three
    factorizations together reproduce m2l_core exactly.
    """
    lma = 2 * p - 2
    d_max = 2 * p - 2
    g = np.zeros((d_max + 1) * (d_max + 1), dtype=np.complex128)
    for d in range(d_max + 1):
        for mu in range(-d, d + 1):
            g[d * d + d + mu] = (IPOW[abs(mu) % 4] * y2[d * d + d + mu]
                                 * rinv_pow[d] / a_tab[d, mu + lma])
    return g


@njit(cache=True, nogil=True)
def m2l_apply_g(src_scaled, g, target_scale, p, out):
    """Fast m2l: one complex multiply-add per coefficient pair.

    ``src_scaled`` is the multipole elementwise-multiplied by m2l_source_scale;
    ``g`` is the per-offset table from m2l_g_table.
    """
    for j in range(p):
        jbase = j * j + j
        for k in range(-j, j + 1):
            acc = 0.0j
            for n in range(p):
                d = j + n
                dbase = d * d + d - k
                nbase = n * n + n
                for m in range(-n, n + 1):
                    acc += src_scaled[nbase + m] * g[dbase + m]
            out[jbase + k] += target_scale[jbase + k] * acc


@njit(cache=True, nogil=True)
def l2l_core(src, y, rho, a, lma, p, out):
    """Re-centre a local expansion along the shift whose harmonics are ``y``."""
    rho_pow = np.empty(p)
    rho_pow[0] = 1.0
    for n in range(1, p):
        rho_pow[n] = rho_pow[n - 1] * rho
    for j in range(p):
        for k in range(-j, j + 1):
            acc = 0.0j
            ajk = a[j, k + lma]
            for n in range(j, p):
                jn = n - j
                sgn = -1.0 if ((n + j) & 1) else 1.0
                lo = -n if -n > k - jn else k - jn
                hi = n if n < k + jn else k + jn
                for m in range(lo, hi + 1):
                    e = abs(m) - abs(m - k) - abs(k)
                    acc += (src[n * n + n + m]
                            * IPOW[e % 4]
                            * a[jn, (m - k) + lma] * ajk
                            * y[jn * jn + jn + m - k]
                            * rho_pow[jn] * sgn / a[n, m + lma])
            out[j * j + j + k] += acc


@njit(cache=True, nogil=True)
def p2m_single(q, dx, dy, dz, p, pscr, yscr, out):
    """Multipole moments of one point charge about a centre it is displaced from."""
    rho = ylm_fill(p - 1, dx, dy, dz, pscr, yscr)
    p2m_accum(q, rho, yscr, p, out)
