"""Public expansion types and translation operators.

These wrap the numba cores with small dataclasses; the solver's per-level
kernels use the same cores directly on flat coefficient arrays.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import AtomsimError, NotWellSeparated
from . import harmonics as hm


@dataclass(frozen=True)
class FmmConfig:
    """Expansion order and octree depth.

    ``num_terms`` counts expansion degrees: coefficients cover l = 0..p-1,
    p*p complex values per expansion. ``num_levels`` includes the single root
    cell at level 0; the finest level L-1 has 8**(L-1) cells.
    """

    num_terms: int = 10
    num_levels: int = 4

    def __post_init__(self):
        if self.num_terms < 1:
            raise AtomsimError("num_terms must be >= 1")
        if self.num_levels < 2:
            raise AtomsimError("num_levels must be >= 2")


def _as_coeffs(coefficients, p):
    c = np.ascontiguousarray(coefficients, dtype=np.complex128)
    if c.shape != (p * p,):
        raise AtomsimError(f"expected {p * p} coefficients, got shape {c.shape}")
    return c


@dataclass
class MultipoleExpansion:
    """Far-field series about ``centre``; index l*l + l + m, 0 <= l < num_terms."""

    centre: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        self.centre = np.asarray(self.centre, dtype=np.float64).reshape(3)
        self.coefficients = np.ascontiguousarray(self.coefficients, dtype=np.complex128)
        if int(round(np.sqrt(self.coefficients.size))) ** 2 != self.coefficients.size:
            raise AtomsimError("coefficient count must be a perfect square (p*p)")

    @property
    def num_terms(self):
        return int(round(np.sqrt(self.coefficients.size)))

    @classmethod
    def zeros(cls, centre, num_terms):
        return cls(centre, np.zeros(num_terms * num_terms, dtype=np.complex128))


@dataclass
class LocalExpansion:
    """Interior series about ``centre``; same indexing as MultipoleExpansion."""

    centre: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        self.centre = np.asarray(self.centre, dtype=np.float64).reshape(3)
        self.coefficients = np.ascontiguousarray(self.coefficients, dtype=np.complex128)
        if int(round(np.sqrt(self.coefficients.size))) ** 2 != self.coefficients.size:
            raise AtomsimError("coefficient count must be a perfect square (p*p)")

    @property
    def num_terms(self):
        return int(round(np.sqrt(self.coefficients.size)))

    @classmethod
    def zeros(cls, centre, num_terms):
        return cls(centre, np.zeros(num_terms * num_terms, dtype=np.complex128))


_a_cache = {}


def a_table(p):
    tab = _a_cache.get(p)
    if tab is None:
        tab = hm.build_a_table(p)
        _a_cache[p] = tab
    return tab


def _scratch(lmax):
    return (np.empty((lmax + 1, lmax + 1)),
            np.empty((lmax + 1) * (lmax + 1), dtype=np.complex128))


def particle_to_multipole(positions, charges, centre, num_terms):
    """Multipole moments of a charge set: M_l^m = sum_j q_j rho_j^l Y_l^{-m}."""
    p = int(num_terms)
    centre = np.asarray(centre, dtype=np.float64).reshape(3)
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    charges = np.atleast_1d(np.asarray(charges, dtype=np.float64))
    out = np.zeros(p * p, dtype=np.complex128)
    pscr, yscr = _scratch(p - 1)
    for pos, q in zip(positions, charges):
        d = pos - centre
        hm.p2m_single(q, d[0], d[1], d[2], p, pscr, yscr, out)
    return MultipoleExpansion(centre, out)


def m2m(child, new_centre):
    """Exactly re-centre a multipole expansion (coefficientwise for kept degrees)."""
    p = child.num_terms
    new_centre = np.asarray(new_centre, dtype=np.float64).reshape(3)
    out = np.zeros(p * p, dtype=np.complex128)
    d = child.centre - new_centre
    if np.any(d != 0.0):
        pscr, yscr = _scratch(p - 1)
        rho = hm.ylm_fill(p - 1, d[0], d[1], d[2], pscr, yscr)
        hm.m2m_core(child.coefficients, yscr, rho, a_table(p), 2 * p - 2, p, out)
    else:
        out[:] = child.coefficients
    return MultipoleExpansion(new_centre, out)


def m2l(source, target_centre, cell_width=None):
    """Translate a multipole into a local expansion about ``target_centre``.

    When ``cell_width`` is given, adjacency is rejected: same-size cells are
    well separated only when centres differ by at least two widths along some
    axis.
    """
    p = source.num_terms
    target_centre = np.asarray(target_centre, dtype=np.float64).reshape(3)
    d = source.centre - target_centre
    rho = float(np.linalg.norm(d))
    if rho == 0.0:
        raise NotWellSeparated("source and target centres coincide")
    if cell_width is not None:
        if np.max(np.abs(d)) < 2.0 * cell_width * (1.0 - 1e-12):
            raise NotWellSeparated(
                f"cells with centre offset {d} and width {cell_width} are adjacent"
            )
    lmax = 2 * p - 2
    pscr, yscr = _scratch(lmax)
    hm.ylm_fill(lmax, d[0], d[1], d[2], pscr, yscr)
    rinv_pow = (1.0 / rho) ** np.arange(1, 2 * p, dtype=np.float64)
    out = np.zeros(p * p, dtype=np.complex128)
    hm.m2l_core(source.coefficients, yscr, rinv_pow, a_table(p), lmax, p, out)
    return LocalExpansion(target_centre, out)


def l2l(parent, child_centre):
    """Exactly re-centre a finite local expansion (evaluation-preserving)."""
    p = parent.num_terms
    child_centre = np.asarray(child_centre, dtype=np.float64).reshape(3)
    out = np.zeros(p * p, dtype=np.complex128)
    d = parent.centre - child_centre
    if np.any(d != 0.0):
        pscr, yscr = _scratch(p - 1)
        rho = hm.ylm_fill(p - 1, d[0], d[1], d[2], pscr, yscr)
        hm.l2l_core(parent.coefficients, yscr, rho, a_table(p), 2 * p - 2, p, out)
    else:
        out[:] = parent.coefficients
    return LocalExpansion(child_centre, out)


def evaluate_local(expansion, x):
    """Real potential of the local expansion at point ``x`` inside its cell."""
    p = expansion.num_terms
    d = np.asarray(x, dtype=np.float64).reshape(3) - expansion.centre
    pscr, yscr = _scratch(p - 1)
    rho = hm.ylm_fill(p - 1, d[0], d[1], d[2], pscr, yscr)
    return hm.eval_local_core(expansion.coefficients, yscr, rho, p).real


def evaluate_multipole(expansion, x):
    """Real far-field potential of the multipole expansion at outside point ``x``."""
    p = expansion.num_terms
    d = np.asarray(x, dtype=np.float64).reshape(3) - expansion.centre
    pscr, yscr = _scratch(p - 1)
    rho = hm.ylm_fill(p - 1, d[0], d[1], d[2], pscr, yscr)
    if rho == 0.0:
        raise AtomsimError("far-field evaluation at the expansion centre")
    return hm.eval_multipole_core(expansion.coefficients, yscr, rho, p).real
