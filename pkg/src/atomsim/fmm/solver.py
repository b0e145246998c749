"""Upward/downward passes, near-field sums, and the full solve."""

from dataclasses import dataclass

import numpy as np
from numba import njit

from ..errors import CoincidentParticles
from ..threads import run_chunked
from . import harmonics as hm


@njit(cache=True, nogil=True)
def _p2m_cells(lo, hi, order, start, positions, charges, n_axis, width, p, mpoles):
    pscr = np.empty((p, p))
    yscr = np.empty(p * p, dtype=np.complex128)
    for c in range(lo, hi):
        if start[c] == start[c + 1]:
            continue
        iz = c % n_axis
        iy = (c // n_axis) % n_axis
        ix = c // (n_axis * n_axis)
        cx = (ix + 0.5) * width
        cy = (iy + 0.5) * width
        cz = (iz + 0.5) * width
        for idx in range(start[c], start[c + 1]):
            i = order[idx]
            hm.p2m_single(charges[i], positions[i, 0] - cx, positions[i, 1] - cy,
                          positions[i, 2] - cz, p, pscr, yscr, mpoles[c])


@njit(cache=True, nogil=True)
def _m2m_level(lo, hi, parent_m, child_m, y8, rho8, a, lma, p, n_parent):
    n_child = 2 * n_parent
    for q in range(lo, hi):
        qz = q % n_parent
        qy = (q // n_parent) % n_parent
        qx = q // (n_parent * n_parent)
        for k in range(8):
            sx = 2 * qx + ((k >> 2) & 1)
            sy = 2 * qy + ((k >> 1) & 1)
            sz = 2 * qz + (k & 1)
            c = (sx * n_child + sy) * n_child + sz
            nonzero = False
            for t in range(child_m.shape[1]):
                if child_m[c, t] != 0.0:
                    nonzero = True
                    break
            if not nonzero:
                continue
            hm.m2m_core(child_m[c], y8[k], rho8[k], a, lma, p, parent_m[q])


@njit(cache=True, nogil=True)
def _m2l_level(lo, hi, locals_l, scaled_m, has_data, il_start, il_src, il_off,
               g_off, tgt_scale, p):
    for t in range(lo, hi):
        for k in range(il_start[t], il_start[t + 1]):
            s = il_src[k]
            if not has_data[s]:
                continue
            hm.m2l_apply_g(scaled_m[s], g_off[il_off[k]], tgt_scale, p, locals_l[t])


@njit(cache=True, nogil=True)
def _l2l_level(lo, hi, child_l, parent_l, y8, rho8, a, lma, p, n_child):
    n_parent = n_child // 2
    for c in range(lo, hi):
        cz = c % n_child
        cy = (c // n_child) % n_child
        cx = c // (n_child * n_child)
        q = ((cx >> 1) * n_parent + (cy >> 1)) * n_parent + (cz >> 1)
        k = ((cx & 1) << 2) | ((cy & 1) << 1) | (cz & 1)
        hm.l2l_core(parent_l[q], y8[k], rho8[k], a, lma, p, child_l[c])


@njit(cache=True, nogil=True)
def _eval_local_cells(lo, hi, order, start, positions, locals_f, n_axis, width,
                      p, out_pot):
    pscr = np.empty((p, p))
    yscr = np.empty(p * p, dtype=np.complex128)
    for c in range(lo, hi):
        if start[c] == start[c + 1]:
            continue
        iz = c % n_axis
        iy = (c // n_axis) % n_axis
        ix = c // (n_axis * n_axis)
        cx = (ix + 0.5) * width
        cy = (iy + 0.5) * width
        cz = (iz + 0.5) * width
        for idx in range(start[c], start[c + 1]):
            i = order[idx]
            rho = hm.ylm_fill(p - 1, positions[i, 0] - cx, positions[i, 1] - cy,
                              positions[i, 2] - cz, pscr, yscr)
            out_pot[i] += hm.eval_local_core(locals_f[c], yscr, rho, p).real


@njit(cache=True, nogil=True)
def _near_field_cells(lo, hi, order, start, positions, charges, n_axis, out_pot):
    status = 0
    for c in range(lo, hi):
        if start[c] == start[c + 1]:
            continue
        iz = c % n_axis
        iy = (c // n_axis) % n_axis
        ix = c // (n_axis * n_axis)
        for idx in range(start[c], start[c + 1]):
            i = order[idx]
            acc = 0.0
            for dx in range(-1, 2):
                jx = ix + dx
                if jx < 0 or jx >= n_axis:
                    continue
                for dy in range(-1, 2):
                    jy = iy + dy
                    if jy < 0 or jy >= n_axis:
                        continue
                    for dz in range(-1, 2):
                        jz = iz + dz
                        if jz < 0 or jz >= n_axis:
                            continue
                        cj = (jx * n_axis + jy) * n_axis + jz
                        for jdx in range(start[cj], start[cj + 1]):
                            j = order[jdx]
                            if j == i:
                                continue
                            ddx = positions[i, 0] - positions[j, 0]
                            ddy = positions[i, 1] - positions[j, 1]
                            ddz = positions[i, 2] - positions[j, 2]
                            r2 = ddx * ddx + ddy * ddy + ddz * ddz
                            if r2 <= 0.0:
                                status = 1
                                continue
                            acc += charges[j] / np.sqrt(r2)
            out_pot[i] += acc
    return status


@dataclass
class FmmSolveResult:
    """Solve output plus the per-level work exposure used by the harness."""

    energy: float
    potentials: np.ndarray
    level_cell_counts: list
    level_parallel_width: list


def upward_pass(tree, state, workers=1):
    """Particle-to-multipole at the finest level, then translate to the root."""
    p = tree.p
    lma = 2 * p - 2
    finest = tree.finest

    def p2m_chunk(lo, hi, w):
        _p2m_cells(lo, hi, tree.order, tree.start, state.positions, state.charges,
                   tree.n_axis[finest], tree.cell_width[finest], p,
                   tree.multipoles[finest])

    run_chunked(p2m_chunk, tree.n_cells[finest], workers)

    for l in range(finest, 0, -1):
        child_m = tree.multipoles[l]
        parent_m = tree.multipoles[l - 1]
        y8, rho8 = tree.m2m_y[l], tree.m2m_rho[l]

        def m2m_chunk(lo, hi, w, child_m=child_m, parent_m=parent_m, y8=y8,
                      rho8=rho8, n_parent=tree.n_axis[l - 1]):
            _m2m_level(lo, hi, parent_m, child_m, y8, rho8, tree.a_table, lma, p,
                       n_parent)

        run_chunked(m2m_chunk, tree.n_cells[l - 1], workers)


def downward_pass(tree, workers=1):
    """m2l over interaction lists then l2l towards the finest level.

    Levels are separated by barriers; within a level each worker owns a
    disjoint range of target cells.
    """
    p = tree.p
    lma = 2 * p - 2
    for l in range(2, tree.num_levels):
        if l > 2:
            child_l = tree.locals_[l]
            parent_l = tree.locals_[l - 1]
            y8, rho8 = tree.l2l_y[l], tree.l2l_rho[l]

            def l2l_chunk(lo, hi, w, child_l=child_l, parent_l=parent_l, y8=y8,
                          rho8=rho8, n_child=tree.n_axis[l]):
                _l2l_level(lo, hi, child_l, parent_l, y8, rho8, tree.a_table,
                           lma, p, n_child)

            run_chunked(l2l_chunk, tree.n_cells[l], workers)

        m2l_level_pass(tree, l, workers=workers)


def m2l_level_pass(tree, level, workers=1):
    """Accumulate every interaction-list translation into one level's locals."""
    p = tree.p
    locals_l = tree.locals_[level]
    mpoles_l = tree.multipoles[level]
    scaled_m = mpoles_l * tree.m2l_src_scale[None, :]
    has_data = np.any(mpoles_l != 0.0, axis=1)
    il_start = tree.il_start[level]
    il_src = tree.il_src[level]
    il_off = tree.il_off[level]
    g_off = tree.m2l_g[level]

    def m2l_chunk(lo, hi, w):
        _m2l_level(lo, hi, locals_l, scaled_m, has_data, il_start, il_src,
                   il_off, g_off, tree.m2l_tgt_scale, p)

    run_chunked(m2l_chunk, tree.n_cells[level], workers)


def near_field_direct(tree, state, workers=1):
    """Direct Coulomb sums over each particle's own and 26 adjacent finest cells.

    Returns (per-particle potentials, energy contribution 1/2 sum q_i phi_i).
    """
    finest = tree.finest
    potentials = np.zeros(state.count)
    status = np.zeros(max(workers, 1), dtype=np.int64)

    def chunk(lo, hi, w):
        status[w] = _near_field_cells(lo, hi, tree.order, tree.start,
                                      state.positions, state.charges,
                                      tree.n_axis[finest], potentials)

    run_chunked(chunk, tree.n_cells[finest], workers)
    if status.any():
        raise CoincidentParticles("distinct particles at zero separation in near field")
    return potentials, 0.5 * float(np.dot(state.charges, potentials))


def evaluate_far_field(tree, state, workers=1):
    """Evaluate the finest-level local expansions at every particle."""
    finest = tree.finest
    potentials = np.zeros(state.count)

    def chunk(lo, hi, w):
        _eval_local_cells(lo, hi, tree.order, tree.start, state.positions,
                          tree.locals_[finest], tree.n_axis[finest],
                          tree.cell_width[finest], tree.p, potentials)

    run_chunked(chunk, tree.n_cells[finest], workers)
    return potentials


def fmm_solve(tree, state, workers=1):
    """Full solve: upward pass, downward pass, local evaluation plus near field.

    Energy is 1/2 sum_i q_i phi_i with self-interaction excluded. The tree's
    occupancy must be current for ``state`` (see FmmTree.refresh_occupancy).
    """
    tree.zero_expansions()
    upward_pass(tree, state, workers=workers)
    downward_pass(tree, workers=workers)
    far = evaluate_far_field(tree, state, workers=workers)
    near, _ = near_field_direct(tree, state, workers=workers)
    potentials = far + near
    energy = 0.5 * float(np.dot(state.charges, potentials))
    counts = tree.level_cell_counts
    return FmmSolveResult(
        energy=energy,
        potentials=potentials,
        level_cell_counts=counts,
        level_parallel_width=[min(workers, c) for c in counts],
    )
