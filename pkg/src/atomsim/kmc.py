"""Rejection-free kinetic Monte Carlo on a cubic lattice of charges.

Energy differences are evaluated in O(1) per proposal from maintained
multipole machinery: each level keeps the local expansions produced by
interaction-list translations (no downward re-centring), and the potential at
a point is the sum of its ancestor cells' local evaluations plus a direct sum
over the 27 nearest finest cells. Because the square-truncated translation
makes pair interactions exactly symmetric, every proposal's delta-U is the
exact difference of the solver's energy functional, so accepted deltas
telescope against a fresh rebuild to round-off.
"""

import math
import time as _time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import (
    AtomsimError,
    CoincidentParticles,
    DestinationOccupied,
    NoMovesAvailable,
)
from .fmm import harmonics as hm
from .fmm.operators import FmmConfig
from .fmm.solver import m2l_level_pass, upward_pass
from .fmm.tree import FmmTree, N_OFFSETS, OFFSET_SPAN
from .particles import ParticleState, SimulationDomain
from .threads import run_chunked

HOP_DIRECTIONS = np.array(
    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
    dtype=np.int64,
)


@dataclass
class KmcConfig:
    """Lattice geometry, rate parameter, and expansion configuration."""

    lattice_per_axis: int
    site_spacing: float = 1.0
    beta: float = 1.0
    fmm: FmmConfig = field(default_factory=lambda: FmmConfig(num_terms=12, num_levels=4))
    hop_directions: np.ndarray = field(default_factory=lambda: HOP_DIRECTIONS.copy())

    def __post_init__(self):
        if self.lattice_per_axis < 1:
            raise AtomsimError("lattice_per_axis must be >= 1")
        if not self.site_spacing > 0.0:
            raise AtomsimError("site_spacing must be positive")
        if not self.beta > 0.0:
            raise AtomsimError("beta must be positive")
        self.hop_directions = np.asarray(self.hop_directions, dtype=np.int64)
        if self.hop_directions.shape != (6, 3):
            raise AtomsimError("exactly six axis-aligned hop directions are required")

    @property
    def n_sites(self):
        return self.lattice_per_axis ** 3


@dataclass
class MoveProposal:
    charge_id: int
    source_site: tuple
    dest_site: tuple
    delta_u: float = None
    rate: float = None


class ProposalSet:
    """Column-array view of all proposals for one step (sequence of MoveProposal)."""

    def __init__(self, charge_ids, sources, dests):
        self.charge_ids = charge_ids
        self.sources = sources
        self.dests = dests
        self.delta_u = None
        self.rates = None

    def __len__(self):
        return self.charge_ids.shape[0]

    def __getitem__(self, t):
        if t < 0 or t >= len(self):
            raise IndexError(t)
        return MoveProposal(
            int(self.charge_ids[t]),
            tuple(int(v) for v in self.sources[t]),
            tuple(int(v) for v in self.dests[t]),
            None if self.delta_u is None else float(self.delta_u[t]),
            None if self.rates is None else float(self.rates[t]),
        )

    def __iter__(self):
        for t in range(len(self)):
            yield self[t]


# ---------------------------------------------------------------------------
# evaluation kernels


@njit(cache=True, nogil=True)
def _far_potential(sx, sy, sz, px, py, pz, n_lv, luts, n_axis_lv, w_lv,
                   row_base, locals_flat, p, pscr, yscr):
    """Sum of ancestor-level local expansions evaluated at (px, py, pz)."""
    acc = 0.0
    for lv in range(n_lv):
        na = n_axis_lv[lv]
        ax = luts[lv, sx]
        ay = luts[lv, sy]
        az = luts[lv, sz]
        row = row_base[lv] + (ax * na + ay) * na + az
        w = w_lv[lv]
        rho = hm.ylm_fill(p - 1, px - (ax + 0.5) * w, py - (ay + 0.5) * w,
                          pz - (az + 0.5) * w, pscr, yscr)
        acc += hm.eval_local_core(locals_flat[row], yscr, rho, p).real
    return acc


@njit(cache=True, nogil=True)
def _near_potential(sx, sy, sz, px, py, pz, exclude, lut_f, n_axis_f, spacing,
                    charge_sites, charges, cell_list, cell_count):
    """Direct Coulomb sum over the 27 finest cells around site (sx, sy, sz).

    Returns (potential, error_flag); the flag is set on a coincident distinct
    charge.
    """
    cx = lut_f[sx]
    cy = lut_f[sy]
    cz = lut_f[sz]
    acc = 0.0
    bad = 0
    for dx in range(-1, 2):
        jx = cx + dx
        if jx < 0 or jx >= n_axis_f:
            continue
        for dy in range(-1, 2):
            jy = cy + dy
            if jy < 0 or jy >= n_axis_f:
                continue
            for dz in range(-1, 2):
                jz = cz + dz
                if jz < 0 or jz >= n_axis_f:
                    continue
                cell = (jx * n_axis_f + jy) * n_axis_f + jz
                for k in range(cell_count[cell]):
                    j = cell_list[cell, k]
                    if j == exclude:
                        continue
                    qx = (charge_sites[j, 0] + 0.5) * spacing - px
                    qy = (charge_sites[j, 1] + 0.5) * spacing - py
                    qz = (charge_sites[j, 2] + 0.5) * spacing - pz
                    r2 = qx * qx + qy * qy + qz * qz
                    if r2 <= 0.0:
                        bad = 1
                        continue
                    acc += charges[j] / np.sqrt(r2)
    return acc, bad


@njit(cache=True, nogil=True)
def _self_correction(ssx, ssy, ssz, dsx, dsy, dsz, q, px_src, py_src, pz_src,
                     px_dst, py_dst, pz_dst, n_lv, luts, n_axis_lv, w_lv,
                     g_tables, src_scale, tgt_scale, p, pscr, yscr, mscr, lscr):
    """Mover's own stale contribution to the destination cell's local expansions.

    Nonzero only when the source and destination sites sit in well-separated
    cells at some level (never the case for nearest-neighbour hops).
    """
    for lv in range(n_lv):
        ax = luts[lv, dsx]
        ay = luts[lv, dsy]
        az = luts[lv, dsz]
        bx = luts[lv, ssx]
        by = luts[lv, ssy]
        bz = luts[lv, ssz]
        ox = bx - ax
        oy = by - ay
        oz = bz - az
        amax = max(abs(ox), abs(oy), abs(oz))
        if amax <= 1:
            continue
        pmax = max(abs((bx >> 1) - (ax >> 1)), abs((by >> 1) - (ay >> 1)),
                   abs((bz >> 1) - (az >> 1)))
        if pmax > 1:
            continue
        w = w_lv[lv]
        for t in range(p * p):
            mscr[t] = 0.0
        hm.p2m_single(q, px_src - (bx + 0.5) * w, py_src - (by + 0.5) * w,
                      pz_src - (bz + 0.5) * w, p, pscr, yscr, mscr)
        for t in range(p * p):
            mscr[t] = mscr[t] * src_scale[t]
            lscr[t] = 0.0
        oid = ((ox + 3) * 7 + (oy + 3)) * 7 + (oz + 3)
        hm.m2l_apply_g(mscr, g_tables[lv, oid], tgt_scale, p, lscr)
        rho = hm.ylm_fill(p - 1, px_dst - (ax + 0.5) * w, py_dst - (ay + 0.5) * w,
                          pz_dst - (az + 0.5) * w, pscr, yscr)
        return hm.eval_local_core(lscr, yscr, rho, p).real
    return 0.0


@njit(cache=True, nogil=True)
def _proposal_deltas(lo, hi, charge_ids, sources, dests, charge_sites, charges,
                     n_lv, luts, lut_f, n_axis_lv, n_axis_f, w_lv, spacing,
                     row_base, locals_flat, g_tables, src_scale, tgt_scale,
                     cell_list, cell_count, p, out_du):
    pscr = np.empty((p, p))
    yscr = np.empty(p * p, dtype=np.complex128)
    mscr = np.empty(p * p, dtype=np.complex128)
    lscr = np.empty(p * p, dtype=np.complex128)
    bad = 0
    for t in range(lo, hi):
        c = charge_ids[t]
        q = charges[c]
        sx, sy, sz = sources[t, 0], sources[t, 1], sources[t, 2]
        dx, dy, dz = dests[t, 0], dests[t, 1], dests[t, 2]
        px_s = (sx + 0.5) * spacing
        py_s = (sy + 0.5) * spacing
        pz_s = (sz + 0.5) * spacing
        px_d = (dx + 0.5) * spacing
        py_d = (dy + 0.5) * spacing
        pz_d = (dz + 0.5) * spacing

        phi_src = _far_potential(sx, sy, sz, px_s, py_s, pz_s, n_lv, luts,
                                 n_axis_lv, w_lv, row_base, locals_flat, p,
                                 pscr, yscr)
        near_s, bad_s = _near_potential(sx, sy, sz, px_s, py_s, pz_s, c, lut_f,
                                        n_axis_f, spacing, charge_sites, charges,
                                        cell_list, cell_count)
        phi_dst = _far_potential(dx, dy, dz, px_d, py_d, pz_d, n_lv, luts,
                                 n_axis_lv, w_lv, row_base, locals_flat, p,
                                 pscr, yscr)
        near_d, bad_d = _near_potential(dx, dy, dz, px_d, py_d, pz_d, c, lut_f,
                                        n_axis_f, spacing, charge_sites, charges,
                                        cell_list, cell_count)
        corr = _self_correction(sx, sy, sz, dx, dy, dz, q, px_s, py_s, pz_s,
                                px_d, py_d, pz_d, n_lv, luts, n_axis_lv, w_lv,
                                g_tables, src_scale, tgt_scale, p, pscr, yscr,
                                mscr, lscr)
        bad |= bad_s | bad_d
        out_du[t] = q * ((phi_dst + near_d - corr) - (phi_src + near_s))
    return bad


@njit(cache=True, nogil=True)
def _charge_potentials(lo, hi, charge_sites, charges, n_lv, luts, lut_f,
                       n_axis_lv, n_axis_f, w_lv, spacing, row_base,
                       locals_flat, cell_list, cell_count, p, out_phi):
    pscr = np.empty((p, p))
    yscr = np.empty(p * p, dtype=np.complex128)
    bad = 0
    for c in range(lo, hi):
        sx, sy, sz = charge_sites[c, 0], charge_sites[c, 1], charge_sites[c, 2]
        px = (sx + 0.5) * spacing
        py = (sy + 0.5) * spacing
        pz = (sz + 0.5) * spacing
        phi = _far_potential(sx, sy, sz, px, py, pz, n_lv, luts, n_axis_lv,
                             w_lv, row_base, locals_flat, p, pscr, yscr)
        near, b = _near_potential(sx, sy, sz, px, py, pz, c, lut_f, n_axis_f,
                                  spacing, charge_sites, charges, cell_list,
                                  cell_count)
        bad |= b
        out_phi[c] = phi + near
    return bad


@njit(cache=True, nogil=True)
def _apply_level(lo, hi, targets, neg_oids, s_delta, locals_lv_flat, g_lv,
                 tgt_scale, p):
    for k in range(lo, hi):
        hm.m2l_apply_g(s_delta, g_lv[neg_oids[k]], tgt_scale, p,
                       locals_lv_flat[targets[k]])


# ---------------------------------------------------------------------------
# solver state


class KmcSolver:
    """Maintained expansion state: per-level locals plus finest-cell charge lists."""

    def __init__(self, config, workers=1):
        self.config = config
        n_sites = config.lattice_per_axis
        self.n_sites = n_sites
        self.spacing = config.site_spacing
        self.width = n_sites * config.site_spacing
        domain = SimulationDomain([self.width] * 3, periodic=False)
        self.tree = FmmTree(domain, config.fmm)
        self.p = config.fmm.num_terms
        levels = config.fmm.num_levels
        self.n_lv = max(levels - 2, 0)

        p = self.p
        # site -> cell lookups per expansion level and for the finest level
        self.luts = np.zeros((max(self.n_lv, 1), n_sites), dtype=np.int64)
        self.n_axis_lv = np.zeros(max(self.n_lv, 1), dtype=np.int64)
        self.w_lv = np.zeros(max(self.n_lv, 1))
        for lv in range(self.n_lv):
            level = lv + 2
            na = self.tree.n_axis[level]
            self.n_axis_lv[lv] = na
            self.w_lv[lv] = self.tree.cell_width[level]
            for s in range(n_sites):
                self.luts[lv, s] = ((2 * s + 1) * na) // (2 * n_sites)
        finest = self.tree.finest
        self.n_axis_f = self.tree.n_axis[finest]
        self.lut_f = np.array(
            [((2 * s + 1) * self.n_axis_f) // (2 * n_sites) for s in range(n_sites)],
            dtype=np.int64,
        )

        self.row_base = np.zeros(max(self.n_lv, 1), dtype=np.int64)
        total = 0
        for lv in range(self.n_lv):
            self.row_base[lv] = total
            total += self.tree.n_cells[lv + 2]
        self.locals_flat = np.zeros((total, p * p), dtype=np.complex128)

        gdim = (2 * p - 1) * (2 * p - 1)
        self.g_tables = np.zeros((max(self.n_lv, 1), N_OFFSETS, gdim),
                                 dtype=np.complex128)
        for lv in range(self.n_lv):
            self.g_tables[lv] = self.tree.m2l_g[lv + 2]
        self.src_scale = self.tree.m2l_src_scale
        self.tgt_scale = self.tree.m2l_tgt_scale

        # offset negation lookup for reverse interaction-list updates
        self.neg_oid = np.zeros(N_OFFSETS, dtype=np.int64)
        for ox in range(-3, 4):
            for oy in range(-3, 4):
                for oz in range(-3, 4):
                    oid = ((ox + 3) * OFFSET_SPAN + (oy + 3)) * OFFSET_SPAN + (oz + 3)
                    nid = ((3 - ox) * OFFSET_SPAN + (3 - oy)) * OFFSET_SPAN + (3 - oz)
                    self.neg_oid[oid] = nid

        # finest-cell charge lists; capacity bounded by sites per finest cell
        sites_per_cell = np.bincount(
            self._site_cells_all(), minlength=self.n_axis_f ** 3
        )
        self.cell_cap = int(sites_per_cell.max())
        self.cell_list = np.zeros((self.n_axis_f ** 3, self.cell_cap), dtype=np.int64)
        self.cell_count = np.zeros(self.n_axis_f ** 3, dtype=np.int64)
        self.workers = workers

    def _site_cells_all(self):
        n = self.n_sites
        ax = self.lut_f
        i, j, k = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
        return ((ax[i] * self.n_axis_f + ax[j]) * self.n_axis_f + ax[k]).ravel()

    def site_position(self, site):
        return (np.asarray(site, dtype=np.float64) + 0.5) * self.spacing

    def finest_cell_of_site(self, site):
        ax = self.lut_f
        return (ax[site[0]] * self.n_axis_f + ax[site[1]]) * self.n_axis_f + ax[site[2]]

    def charge_positions(self, charge_sites):
        return (charge_sites.astype(np.float64) + 0.5) * self.spacing

    def rebuild(self, charge_sites, charges, workers=None):
        """Recompute every maintained quantity from scratch for the given charges."""
        workers = workers or self.workers
        pstate = ParticleState(self.charge_positions(charge_sites), charges=charges)
        self.tree.refresh_occupancy(pstate)
        self.tree.zero_expansions()
        upward_pass(self.tree, pstate, workers=workers)
        for lv in range(self.n_lv):
            level = lv + 2
            self.tree.locals_[level][:] = 0.0
            m2l_level_pass(self.tree, level, workers=workers)
            rows = slice(self.row_base[lv], self.row_base[lv] + self.tree.n_cells[level])
            self.locals_flat[rows] = self.tree.locals_[level]
        self.cell_count[:] = 0
        for c in range(charge_sites.shape[0]):
            cell = self.finest_cell_of_site(charge_sites[c])
            self.cell_list[cell, self.cell_count[cell]] = c
            self.cell_count[cell] += 1

    def local_coefficients(self, level):
        """Maintained local expansions of one level (views into the flat store)."""
        lv = level - 2
        if lv < 0 or lv >= self.n_lv:
            raise AtomsimError(f"level {level} holds no local expansions")
        rows = slice(self.row_base[lv], self.row_base[lv] + self.tree.n_cells[level])
        return self.locals_flat[rows]

    def apply_charge_transfer(self, q, old_site, new_site, workers=None):
        """Shift one charge's expansion contributions from old_site to new_site.

        For every level, the cells holding the charge in their interaction
        list receive a point-charge multipole-to-local transfer that removes
        the old-position term and adds the new one.
        """
        workers = workers or self.workers
        p = self.p
        x_old = self.site_position(old_site)
        x_new = self.site_position(new_site)
        for lv in range(self.n_lv):
            level = lv + 2
            na = self.n_axis_lv[lv]
            w = self.w_lv[lv]
            b_old = np.array([self.luts[lv, old_site[0]], self.luts[lv, old_site[1]],
                              self.luts[lv, old_site[2]]])
            b_new = np.array([self.luts[lv, new_site[0]], self.luts[lv, new_site[1]],
                              self.luts[lv, new_site[2]]])
            jobs = []
            if np.array_equal(b_old, b_new):
                centre = (b_old + 0.5) * w
                delta = np.zeros(p * p, dtype=np.complex128)
                pscr = np.empty((p, p))
                yscr = np.empty(p * p, dtype=np.complex128)
                d = x_new - centre
                hm.p2m_single(q, d[0], d[1], d[2], p, pscr, yscr, delta)
                d = x_old - centre
                hm.p2m_single(-q, d[0], d[1], d[2], p, pscr, yscr, delta)
                jobs.append((b_old, delta))
            else:
                for b, sign, x in ((b_old, -q, x_old), (b_new, q, x_new)):
                    centre = (b + 0.5) * w
                    delta = np.zeros(p * p, dtype=np.complex128)
                    pscr = np.empty((p, p))
                    yscr = np.empty(p * p, dtype=np.complex128)
                    d = x - centre
                    hm.p2m_single(sign, d[0], d[1], d[2], p, pscr, yscr, delta)
                    jobs.append((b, delta))
            locals_lv = self.locals_flat[self.row_base[lv]:
                                         self.row_base[lv] + self.tree.n_cells[level]]
            g_lv = self.tree.m2l_g[level]
            il_start = self.tree.il_start[level]
            il_src = self.tree.il_src[level]
            il_off = self.tree.il_off[level]
            for b, delta in jobs:
                flat_b = (b[0] * na + b[1]) * na + b[2]
                lo, hi = il_start[flat_b], il_start[flat_b + 1]
                targets = il_src[lo:hi]
                neg_oids = self.neg_oid[il_off[lo:hi]]
                s_delta = delta * self.src_scale

                def chunk(clo, chi, cw, targets=targets, neg_oids=neg_oids,
                          s_delta=s_delta, locals_lv=locals_lv, g_lv=g_lv):
                    _apply_level(clo, chi, targets, neg_oids, s_delta, locals_lv,
                                 g_lv, self.tgt_scale, p)

                run_chunked(chunk, targets.shape[0], workers)


@dataclass
class KmcState:
    """Occupancy, charge placement, maintained solver, and simulated time."""

    config: KmcConfig
    occupancy: np.ndarray
    charge_sites: np.ndarray
    charges: np.ndarray
    solver: KmcSolver
    sim_time: float = 0.0
    rng_seed: int = 0

    @property
    def charge_count(self):
        return self.charges.shape[0]

    def check_invariants(self):
        n = self.config.lattice_per_axis
        occ = np.flatnonzero(self.occupancy >= 0)
        if occ.size != self.charge_count:
            raise AtomsimError("occupancy/charge bijection broken")
        for flat in occ:
            c = self.occupancy[flat]
            site = self.charge_sites[c]
            if (site[0] * n + site[1]) * n + site[2] != flat:
                raise AtomsimError("occupancy/charge bijection broken")


def create_kmc_state(config, fill_fraction, seed, workers=1):
    """Populate the lattice by seeded shuffle with alternating-sign unit charges."""
    if not 0.0 < fill_fraction <= 1.0:
        raise AtomsimError("fill_fraction must lie in (0, 1]")
    n_sites = config.n_sites
    n_charges = max(1, int(round(fill_fraction * n_sites)))
    rng = np.random.default_rng(seed)
    chosen = rng.permutation(n_sites)[:n_charges]
    n = config.lattice_per_axis
    charge_sites = np.empty((n_charges, 3), dtype=np.int64)
    charge_sites[:, 0] = chosen // (n * n)
    charge_sites[:, 1] = (chosen // n) % n
    charge_sites[:, 2] = chosen % n
    charges = np.where(np.arange(n_charges) % 2 == 0, 1.0, -1.0)
    occupancy = np.full(n_sites, -1, dtype=np.int64)
    occupancy[chosen] = np.arange(n_charges)
    solver = KmcSolver(config, workers=workers)
    solver.rebuild(charge_sites, charges, workers=workers)
    return KmcState(config, occupancy, charge_sites, charges, solver,
                    sim_time=0.0, rng_seed=seed)


# ---------------------------------------------------------------------------
# operations


def enumerate_proposals(state):
    """All (charge, direction) hops onto existing, unoccupied sites.

    Ordered by (charge id, direction index); rates and deltas are unfilled.
    """
    n = state.config.lattice_per_axis
    sites = state.charge_sites
    n_charges = sites.shape[0]
    dests = sites[:, None, :] + state.config.hop_directions[None, :, :]
    in_bounds = np.all((dests >= 0) & (dests < n), axis=2)
    flat = (dests[:, :, 0] * n + dests[:, :, 1]) * n + dests[:, :, 2]
    flat = np.where(in_bounds, flat, 0)
    free = in_bounds & (state.occupancy[flat] < 0)
    cid, did = np.nonzero(free)
    return ProposalSet(cid.astype(np.int64), sites[cid], dests[cid, did])


def _delta_batch(state, charge_ids, sources, dests, workers=1):
    sol = state.solver
    n_prop = charge_ids.shape[0]
    out = np.zeros(n_prop)
    bad = np.zeros(max(workers, 1), dtype=np.int64)

    def chunk(lo, hi, w):
        bad[w] = _proposal_deltas(
            lo, hi, charge_ids, sources, dests, state.charge_sites, state.charges,
            sol.n_lv, sol.luts, sol.lut_f, sol.n_axis_lv, sol.n_axis_f, sol.w_lv,
            sol.spacing, sol.row_base, sol.locals_flat, sol.g_tables,
            sol.src_scale, sol.tgt_scale, sol.cell_list, sol.cell_count,
            sol.p, out,
        )

    run_chunked(chunk, n_prop, workers)
    if bad.any():
        raise CoincidentParticles("proposal endpoint coincides with another charge")
    return out


def proposed_energy_diff(state, proposal, workers=1):
    """Electrostatic energy change of one hop, from the maintained expansions."""
    cid = np.array([proposal.charge_id], dtype=np.int64)
    src = np.array([proposal.source_site], dtype=np.int64)
    dst = np.array([proposal.dest_site], dtype=np.int64)
    return float(_delta_batch(state, cid, src, dst, workers=workers)[0])


def compute_proposal_deltas(state, proposals, workers=1):
    """Fill delta_u for every proposal (each one a pure function of the state)."""
    proposals.delta_u = _delta_batch(
        state, proposals.charge_ids, proposals.sources, proposals.dests,
        workers=workers,
    )
    return proposals.delta_u


def hop_rate(delta_u, beta):
    """Metropolis propensity: 1 for downhill, exp(-beta dU) uphill."""
    du = np.asarray(delta_u, dtype=np.float64)
    out = np.where(du <= 0.0, 1.0, np.exp(-beta * du))
    return float(out) if np.isscalar(delta_u) or du.ndim == 0 else out


def fill_rates(proposals, beta):
    proposals.rates = hop_rate(proposals.delta_u, beta)
    return proposals.rates


def select_move(proposals, rng):
    """Propensity-proportional selection plus a residence time draw.

    Consumes exactly two uniforms: one to pick the move by inverse transform
    over the prefix sums (in proposal order), one for dt = -ln(u)/R.
    """
    if len(proposals) == 0:
        raise NoMovesAvailable("no executable hops")
    if proposals.rates is None:
        raise AtomsimError("rates must be filled before selection")
    cum = np.cumsum(proposals.rates)
    total = float(cum[-1])
    if not total > 0.0:
        raise NoMovesAvailable("total propensity is zero")
    k = int(np.searchsorted(cum, rng.random() * total, side="right"))
    k = min(k, len(proposals) - 1)
    u = rng.random()
    while u <= 0.0:
        u = rng.random()
    dt = -math.log(u) / total
    return proposals[k], dt


def apply_move(state, proposal, workers=1, delta_t=0.0):
    """Execute one accepted hop: occupancy, cell lists, expansions, clock."""
    n = state.config.lattice_per_axis
    src = np.asarray(proposal.source_site, dtype=np.int64)
    dst = np.asarray(proposal.dest_site, dtype=np.int64)
    c = proposal.charge_id
    src_flat = (src[0] * n + src[1]) * n + src[2]
    dst_flat = (dst[0] * n + dst[1]) * n + dst[2]
    if state.occupancy[dst_flat] >= 0:
        raise DestinationOccupied(f"site {tuple(dst)} is occupied")
    if state.occupancy[src_flat] != c:
        raise AtomsimError("proposal is stale: charge is not at its source site")

    sol = state.solver
    sol.apply_charge_transfer(state.charges[c], src, dst, workers=workers)

    state.occupancy[src_flat] = -1
    state.occupancy[dst_flat] = c
    state.charge_sites[c] = dst
    old_cell = sol.finest_cell_of_site(src)
    new_cell = sol.finest_cell_of_site(dst)
    if old_cell != new_cell:
        cnt = sol.cell_count[old_cell]
        for k in range(cnt):
            if sol.cell_list[old_cell, k] == c:
                sol.cell_list[old_cell, k] = sol.cell_list[old_cell, cnt - 1]
                break
        sol.cell_count[old_cell] = cnt - 1
        sol.cell_list[new_cell, sol.cell_count[new_cell]] = c
        sol.cell_count[new_cell] += 1
    state.sim_time += delta_t
    return state


def charge_potentials(state, workers=1):
    """Per-charge potentials from the maintained expansions plus near field."""
    sol = state.solver
    out = np.zeros(state.charge_count)
    bad = np.zeros(max(workers, 1), dtype=np.int64)

    def chunk(lo, hi, w):
        bad[w] = _charge_potentials(
            lo, hi, state.charge_sites, state.charges, sol.n_lv, sol.luts,
            sol.lut_f, sol.n_axis_lv, sol.n_axis_f, sol.w_lv, sol.spacing,
            sol.row_base, sol.locals_flat, sol.cell_list, sol.cell_count,
            sol.p, out,
        )

    run_chunked(chunk, state.charge_count, workers)
    if bad.any():
        raise CoincidentParticles("two charges share a site")
    return out


def total_energy(state, workers=1, fresh=True):
    """Electrostatic energy 1/2 sum q_i phi_i; optionally from a fresh rebuild."""
    if fresh:
        state.solver.rebuild(state.charge_sites, state.charges, workers=workers)
    phi = charge_potentials(state, workers=workers)
    return 0.5 * float(np.dot(state.charges, phi))


@dataclass
class KmcStepRecord:
    step: int
    charge_id: int
    source_site: tuple
    dest_site: tuple
    delta_u: float
    delta_t: float
    wall_seconds: float
    proposal_seconds: float


def trajectory_line(rec):
    s, d = rec.source_site, rec.dest_site
    return (f"{rec.step} {rec.charge_id} {s[0]} {s[1]} {s[2]} "
            f"{d[0]} {d[1]} {d[2]} {rec.delta_u!r} {rec.delta_t!r}")


def write_trajectory(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(trajectory_line(rec) + "\n")


def run_kmc(state, steps, workers=1, rng_seed=None, trajectory_path=None, rng=None):
    """Rejection-free loop: enumerate, evaluate, select, apply.

    Returns one KmcStepRecord per executed step; stops early (with the steps
    completed so far) if the system freezes. The RNG stream consumes two
    uniforms per step, so a fixed seed reproduces the trajectory exactly; a
    caller-owned generator may be passed instead to continue an open stream.
    """
    if rng is None:
        rng = np.random.default_rng(state.rng_seed if rng_seed is None else rng_seed)
    records = []
    traj = open(trajectory_path, "w", encoding="utf-8") if trajectory_path else None
    try:
        for step in range(steps):
            t0 = _time.perf_counter()
            proposals = enumerate_proposals(state)
            tp0 = _time.perf_counter()
            compute_proposal_deltas(state, proposals, workers=workers)
            tp1 = _time.perf_counter()
            fill_rates(proposals, state.config.beta)
            try:
                chosen, dt = select_move(proposals, rng)
            except NoMovesAvailable:
                break
            apply_move(state, chosen, workers=workers, delta_t=dt)
            t1 = _time.perf_counter()
            rec = KmcStepRecord(step, chosen.charge_id, chosen.source_site,
                                chosen.dest_site, chosen.delta_u, dt,
                                t1 - t0, tp1 - tp0)
            records.append(rec)
            if traj is not None:
                traj.write(trajectory_line(rec) + "\n")
    finally:
        if traj is not None:
            traj.close()
    return records
