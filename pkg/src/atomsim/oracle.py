"""Brute-force O(N^2) reference sums used by tests and acceptance runs.

Everything here is deliberately simple: full pair loops, minimum-image
distances where the domain is periodic, and the same closed-ball cutoff
convention (pairs at exactly the cutoff are included) as the production
paths they check.
"""

import numpy as np
from numba import njit

from .errors import CoincidentParticles, NonPositiveDistance


@njit(cache=True)
def _lj_all_pairs(positions, extent, periodic, eps, sigma, rc, shifted, forces):
    n = positions.shape[0]
    rc2 = rc * rc
    sig2 = sigma * sigma
    src6 = (sig2 / rc2) ** 3
    shift_e = 4.0 * eps * (src6 * src6 - src6) if shifted else 0.0
    pot = 0.0
    status = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = positions[i, 0] - positions[j, 0]
            dy = positions[i, 1] - positions[j, 1]
            dz = positions[i, 2] - positions[j, 2]
            if periodic[0]:
                dx -= extent[0] * np.rint(dx / extent[0])
            if periodic[1]:
                dy -= extent[1] * np.rint(dy / extent[1])
            if periodic[2]:
                dz -= extent[2] * np.rint(dz / extent[2])
            r2 = dx * dx + dy * dy + dz * dz
            if r2 > rc2:
                continue
            if r2 <= 0.0:
                status = 1
                continue
            inv_r2 = 1.0 / r2
            s6 = (sig2 * inv_r2) ** 3
            s12 = s6 * s6
            pot += 4.0 * eps * (s12 - s6) - shift_e
            coef = 24.0 * eps * inv_r2 * (2.0 * s12 - s6)
            forces[i, 0] += coef * dx
            forces[i, 1] += coef * dy
            forces[i, 2] += coef * dz
            forces[j, 0] -= coef * dx
            forces[j, 1] -= coef * dy
            forces[j, 2] -= coef * dz
    return pot, status


def direct_lj_total(state, domain, params):
    """Exact truncated-LJ sum over all N(N-1)/2 pairs; returns (potential, forces)."""
    forces = np.zeros_like(state.positions)
    pot, status = _lj_all_pairs(
        state.positions, domain.extent, domain.periodic,
        params.epsilon, params.sigma, params.cutoff, params.shifted, forces,
    )
    if status:
        raise NonPositiveDistance("coincident particles in direct LJ sum")
    return pot, forces


@njit(cache=True)
def _coulomb_all_pairs(positions, charges, potentials):
    n = positions.shape[0]
    status = 0
    for i in range(n):
        for j in range(n):
            if j == i:
                continue
            dx = positions[i, 0] - positions[j, 0]
            dy = positions[i, 1] - positions[j, 1]
            dz = positions[i, 2] - positions[j, 2]
            r2 = dx * dx + dy * dy + dz * dz
            if r2 <= 0.0:
                status = 1
                continue
            potentials[i] += charges[j] / np.sqrt(r2)
    return status


def direct_coulomb(state):
    """Free-space Coulomb sums: phi_i = sum_{j!=i} q_j / r_ij, energy = 1/2 sum q_i phi_i."""
    potentials = np.zeros(state.count)
    status = _coulomb_all_pairs(state.positions, state.charges, potentials)
    if status:
        raise CoincidentParticles("distinct particles at zero separation")
    energy = 0.5 * float(np.dot(state.charges, potentials))
    return energy, potentials


@njit(cache=True)
def _pairs_within(positions, extent, periodic, cutoff, out_i, out_j):
    n = positions.shape[0]
    c2 = cutoff * cutoff
    k = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = positions[i, 0] - positions[j, 0]
            dy = positions[i, 1] - positions[j, 1]
            dz = positions[i, 2] - positions[j, 2]
            if periodic[0]:
                dx -= extent[0] * np.rint(dx / extent[0])
            if periodic[1]:
                dy -= extent[1] * np.rint(dy / extent[1])
            if periodic[2]:
                dz -= extent[2] * np.rint(dz / extent[2])
            if dx * dx + dy * dy + dz * dz <= c2:
                if k < out_i.shape[0]:
                    out_i[k] = i
                    out_j[k] = j
                k += 1
    return k


def direct_pair_list(state, domain, cutoff):
    """Set of unordered index pairs with minimum-image distance <= cutoff."""
    cap = max(1024, state.count * 64)
    while True:
        out_i = np.empty(cap, dtype=np.int64)
        out_j = np.empty(cap, dtype=np.int64)
        k = _pairs_within(state.positions, domain.extent, domain.periodic,
                          float(cutoff), out_i, out_j)
        if k <= cap:
            return {(int(out_i[t]), int(out_j[t])) for t in range(k)}
        cap = k


@njit(cache=True)
def _energy_diff(positions, charges, moved, new_pos):
    n = positions.shape[0]
    qm = charges[moved]
    du = 0.0
    status = 0
    for j in range(n):
        if j == moved:
            continue
        dxn = new_pos[0] - positions[j, 0]
        dyn = new_pos[1] - positions[j, 1]
        dzn = new_pos[2] - positions[j, 2]
        dxo = positions[moved, 0] - positions[j, 0]
        dyo = positions[moved, 1] - positions[j, 1]
        dzo = positions[moved, 2] - positions[j, 2]
        rn2 = dxn * dxn + dyn * dyn + dzn * dzn
        ro2 = dxo * dxo + dyo * dyo + dzo * dzo
        if rn2 <= 0.0 or ro2 <= 0.0:
            status = 1
            continue
        du += qm * charges[j] * (1.0 / np.sqrt(rn2) - 1.0 / np.sqrt(ro2))
    return du, status


def direct_energy_diff(state, moved_index, new_position):
    """Exact Coulomb energy change for moving one charge to ``new_position``."""
    du, status = _energy_diff(
        state.positions, state.charges, int(moved_index),
        np.asarray(new_position, dtype=np.float64),
    )
    if status:
        raise CoincidentParticles("move endpoint coincides with another charge")
    return du
