"""Uniform octree over a cubic domain with per-level expansion storage."""

import numpy as np
from numba import njit

from ..errors import AtomsimError, NonCubicDomain
from .operators import a_table

OFFSET_SPAN = 7  # interaction-list offsets lie in [-3, 3] per axis


def offset_id(ox, oy, oz):
    return ((ox + 3) * OFFSET_SPAN + (oy + 3)) * OFFSET_SPAN + (oz + 3)


N_OFFSETS = OFFSET_SPAN ** 3


@njit(cache=True)
def _count_il(n_axis, counts):
    half = n_axis // 2
    for tx in range(n_axis):
        for ty in range(n_axis):
            for tz in range(n_axis):
                t = (tx * n_axis + ty) * n_axis + tz
                c = 0
                px, py, pz = tx >> 1, ty >> 1, tz >> 1
                for dpx in range(-1, 2):
                    qx = px + dpx
                    if qx < 0 or qx >= half:
                        continue
                    for dpy in range(-1, 2):
                        qy = py + dpy
                        if qy < 0 or qy >= half:
                            continue
                        for dpz in range(-1, 2):
                            qz = pz + dpz
                            if qz < 0 or qz >= half:
                                continue
                            for cx in range(2):
                                sx = 2 * qx + cx
                                ox = sx - tx
                                for cy in range(2):
                                    sy = 2 * qy + cy
                                    oy = sy - ty
                                    for cz in range(2):
                                        sz = 2 * qz + cz
                                        oz = sz - tz
                                        amax = max(abs(ox), abs(oy), abs(oz))
                                        if amax <= 1:
                                            continue
                                        c += 1
                counts[t] = c


@njit(cache=True)
def _fill_il(n_axis, start, src, off):
    half = n_axis // 2
    for tx in range(n_axis):
        for ty in range(n_axis):
            for tz in range(n_axis):
                t = (tx * n_axis + ty) * n_axis + tz
                k = start[t]
                px, py, pz = tx >> 1, ty >> 1, tz >> 1
                for dpx in range(-1, 2):
                    qx = px + dpx
                    if qx < 0 or qx >= half:
                        continue
                    for dpy in range(-1, 2):
                        qy = py + dpy
                        if qy < 0 or qy >= half:
                            continue
                        for dpz in range(-1, 2):
                            qz = pz + dpz
                            if qz < 0 or qz >= half:
                                continue
                            for cx in range(2):
                                sx = 2 * qx + cx
                                ox = sx - tx
                                for cy in range(2):
                                    sy = 2 * qy + cy
                                    oy = sy - ty
                                    for cz in range(2):
                                        sz = 2 * qz + cz
                                        oz = sz - tz
                                        amax = max(abs(ox), abs(oy), abs(oz))
                                        if amax <= 1:
                                            continue
                                        src[k] = (sx * n_axis + sy) * n_axis + sz
                                        off[k] = ((ox + 3) * 7 + (oy + 3)) * 7 + (oz + 3)
                                        k += 1


@njit(cache=True)
def _bin_to_cells(positions, origin, inv_width, n_axis, out):
    n = positions.shape[0]
    for i in range(n):
        flat = 0
        for d in range(3):
            c = int((positions[i, d] - origin[d]) * inv_width)
            if c < 0:
                c = 0
            elif c >= n_axis:
                c = n_axis - 1
            flat = flat * n_axis + c
        out[i] = flat


def _offset_tables(p, width, a_tab):
    """Per-offset fast-m2l G tables for every well-separated offset vector."""
    from . import harmonics as hm

    lmax = 2 * p - 2
    n_y = (lmax + 1) * (lmax + 1)
    g_tab = np.zeros((N_OFFSETS, n_y), dtype=np.complex128)
    pscr = np.empty((lmax + 1, lmax + 1))
    yscr = np.empty(n_y, dtype=np.complex128)
    for ox in range(-3, 4):
        for oy in range(-3, 4):
            for oz in range(-3, 4):
                if max(abs(ox), abs(oy), abs(oz)) <= 1:
                    continue
                oid = offset_id(ox, oy, oz)
                dx, dy, dz = ox * width, oy * width, oz * width
                rho = hm.ylm_fill(lmax, dx, dy, dz, pscr, yscr)
                rinv_pow = (1.0 / rho) ** np.arange(1, 2 * p)
                g_tab[oid] = hm.m2l_g_table(p, yscr, rinv_pow, a_tab)
    return g_tab


def _shift_tables(p, vectors):
    """Harmonics (degree <= p-1) and lengths for a small set of shift vectors."""
    from . import harmonics as hm

    n_y = p * p
    y_tab = np.zeros((len(vectors), n_y), dtype=np.complex128)
    rho = np.zeros(len(vectors))
    pscr = np.empty((p, p))
    for k, v in enumerate(vectors):
        rho[k] = hm.ylm_fill(p - 1, v[0], v[1], v[2], pscr, y_tab[k])
    return y_tab, rho


class FmmTree:
    """Hierarchical grid of expansions over a cubic, free-space domain.

    Level l has 8**l cells; coefficients live in per-level flat arrays of
    shape (cells, p*p). Interaction lists, offset harmonic tables, and the
    eight parent/child shift tables are precomputed per level at build time.
    """

    def __init__(self, domain, config):
        if not domain.is_cubic:
            raise NonCubicDomain(f"FMM requires a cubic domain, got {domain.extent}")
        self.domain = domain
        self.config = config
        self.width = float(domain.extent[0])
        p = config.num_terms
        levels = config.num_levels
        self.p = p
        self.num_levels = levels
        self.a_table = a_table(p)

        self.n_axis = [2 ** l for l in range(levels)]
        self.n_cells = [na ** 3 for na in self.n_axis]
        self.cell_width = [self.width / na for na in self.n_axis]
        self.multipoles = [
            np.zeros((nc, p * p), dtype=np.complex128) for nc in self.n_cells
        ]
        self.locals_ = [
            np.zeros((nc, p * p), dtype=np.complex128) for nc in self.n_cells
        ]

        from . import harmonics as hm

        self.m2l_src_scale = hm.m2l_source_scale(p, self.a_table)
        self.m2l_tgt_scale = hm.m2l_target_scale(p, self.a_table)

        # interaction lists (empty below level 2: every cell pair is adjacent)
        self.il_start = [None] * levels
        self.il_src = [None] * levels
        self.il_off = [None] * levels
        self.m2l_g = [None] * levels
        for l in range(2, levels):
            na = self.n_axis[l]
            counts = np.zeros(self.n_cells[l], dtype=np.int64)
            _count_il(na, counts)
            start = np.zeros(self.n_cells[l] + 1, dtype=np.int64)
            np.cumsum(counts, out=start[1:])
            src = np.empty(start[-1], dtype=np.int64)
            off = np.empty(start[-1], dtype=np.int64)
            _fill_il(na, start, src, off)
            self.il_start[l] = start
            self.il_src[l] = src
            self.il_off[l] = off
            self.m2l_g[l] = _offset_tables(p, self.cell_width[l], self.a_table)

        # child -> parent multipole shifts and parent -> child local shifts;
        # child k = (cx, cy, cz) bits, displacement (c - 1/2) * child_width
        self.m2m_y = [None] * levels
        self.m2m_rho = [None] * levels
        self.l2l_y = [None] * levels
        self.l2l_rho = [None] * levels
        for l in range(1, levels):
            wc = self.cell_width[l]
            vecs = []
            for k in range(8):
                cx, cy, cz = (k >> 2) & 1, (k >> 1) & 1, k & 1
                vecs.append(((cx - 0.5) * wc, (cy - 0.5) * wc, (cz - 0.5) * wc))
            self.m2m_y[l], self.m2m_rho[l] = _shift_tables(p, vecs)
            neg = [(-v[0], -v[1], -v[2]) for v in vecs]
            self.l2l_y[l], self.l2l_rho[l] = _shift_tables(p, neg)

        # finest-level occupancy, filled by refresh_occupancy
        self.cell_of = None
        self.order = None
        self.start = None

    @property
    def finest(self):
        return self.num_levels - 1

    @property
    def level_cell_counts(self):
        return list(self.n_cells)

    def cell_centre(self, level, flat_index):
        na = self.n_axis[level]
        iz = flat_index % na
        iy = (flat_index // na) % na
        ix = flat_index // (na * na)
        w = self.cell_width[level]
        return np.array([(ix + 0.5) * w, (iy + 0.5) * w, (iz + 0.5) * w])

    def centres(self, level):
        na = self.n_axis[level]
        w = self.cell_width[level]
        idx = (np.arange(na) + 0.5) * w
        gx, gy, gz = np.meshgrid(idx, idx, idx, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])

    def refresh_occupancy(self, state):
        """Re-bin particles into finest-level cells for the current positions."""
        if np.any(state.positions < 0.0) or np.any(state.positions >= self.width):
            raise AtomsimError("particles must lie inside the FMM domain")
        n = state.count
        self.cell_of = np.empty(n, dtype=np.int64)
        _bin_to_cells(state.positions, np.zeros(3), 1.0 / self.cell_width[self.finest],
                      self.n_axis[self.finest], self.cell_of)
        self.order = np.argsort(self.cell_of, kind="stable").astype(np.int64)
        counts = np.bincount(self.cell_of, minlength=self.n_cells[self.finest])
        self.start = np.zeros(self.n_cells[self.finest] + 1, dtype=np.int64)
        np.cumsum(counts, out=self.start[1:])

    def zero_expansions(self):
        for l in range(self.num_levels):
            self.multipoles[l][:] = 0.0
            self.locals_[l][:] = 0.0

    def interaction_list(self, level, flat_index):
        """(source, offset-vector) pairs feeding one cell's local expansion."""
        start = self.il_start[level]
        if start is None:
            return []
        out = []
        for k in range(start[flat_index], start[flat_index + 1]):
            oid = int(self.il_off[level][k])
            oz = oid % OFFSET_SPAN - 3
            oy = (oid // OFFSET_SPAN) % OFFSET_SPAN - 3
            ox = oid // (OFFSET_SPAN * OFFSET_SPAN) - 3
            out.append((int(self.il_src[level][k]), (ox, oy, oz)))
        return out


def build_tree(domain, state, config):
    """Build the octree for ``state``: occupancy filled, expansions zeroed."""
    tree = FmmTree(domain, config)
    tree.refresh_occupancy(state)
    return tree
