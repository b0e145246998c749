"""Cell decomposition and fixed-stride neighbour-matrix construction."""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import AtomsimError, DomainTooSmall
from .threads import run_chunked

INITIAL_STRIDE = 16


@njit(cache=True)
def _bin_particles(positions, extent, cells_per_axis, cell_side, out_cell):
    n = positions.shape[0]
    for i in range(n):
        flat = 0
        for d in range(3):
            c = int(positions[i, d] / cell_side[d])
            if c >= cells_per_axis[d]:
                c = cells_per_axis[d] - 1
            if c < 0:
                c = 0
            flat = flat * cells_per_axis[d] + c
        out_cell[i] = flat


@dataclass
class CellGrid:
    """Spatial binning of a ParticleState into cells of side >= cutoff.

    Occupancy is stored in CSR form: ``order`` lists particle indices sorted
    by cell, ``start`` gives each cell's slice into it. Immutable after
    construction; safe for concurrent reads.
    """

    domain: object
    cutoff: float
    cells_per_axis: np.ndarray
    cell_side: np.ndarray
    cell_of: np.ndarray
    order: np.ndarray
    start: np.ndarray

    @property
    def n_cells(self):
        return int(np.prod(self.cells_per_axis))

    def occupants(self, flat_index):
        return self.order[self.start[flat_index]:self.start[flat_index + 1]]

    def occupancy_lists(self):
        return [list(self.occupants(c)) for c in range(self.n_cells)]


def build_cell_grid(domain, cutoff, state):
    """Bin every particle into the cell grid implied by ``cutoff``.

    Cell counts are floor(extent/cutoff) per axis so that each cell side is at
    least ``cutoff``.
    """
    if not cutoff > 0.0:
        raise AtomsimError(f"cutoff must be positive, got {cutoff}")
    if np.any(domain.extent < cutoff):
        raise DomainTooSmall(
            f"domain extent {domain.extent} has a component below cutoff {cutoff}"
        )
    cells_per_axis = np.floor(domain.extent / cutoff).astype(np.int64)
    cell_side = domain.extent / cells_per_axis
    cell_of = np.empty(state.count, dtype=np.int64)
    _bin_particles(state.positions, domain.extent, cells_per_axis, cell_side, cell_of)
    order = np.argsort(cell_of, kind="stable").astype(np.int64)
    counts = np.bincount(cell_of, minlength=int(np.prod(cells_per_axis)))
    start = np.zeros(counts.size + 1, dtype=np.int64)
    np.cumsum(counts, out=start[1:])
    return CellGrid(domain, float(cutoff), cells_per_axis, cell_side, cell_of, order, start)


@dataclass
class NeighbourMatrix:
    """Rapaport-style fixed-stride pair storage.

    Each stored pair appears once, in the row of its lower index; ``offsets``
    holds the periodic image shift frozen at build time so the force loop can
    form minimum-image displacements without re-wrapping.
    """

    list_cutoff: float
    stride: int
    counts: np.ndarray
    indices: np.ndarray
    offsets: np.ndarray

    def pair_set(self, state=None, domain=None, max_distance=None):
        """Unordered pair set, optionally filtered to pairs within max_distance."""
        pairs = set()
        for i in range(self.counts.shape[0]):
            for k in range(self.counts[i]):
                j = int(self.indices[i, k])
                if max_distance is not None:
                    d = state.positions[i] - state.positions[j] + self.offsets[i, k]
                    if float(np.dot(d, d)) > max_distance * max_distance:
                        continue
                pairs.add((min(i, j), max(i, j)))
        return pairs


@njit(cache=True, nogil=True)
def _nlist_rows(lo, hi, positions, extent, periodic, cells_per_axis, cell_side,
                cell_of, order, start, rn2, stride, counts, indices, offsets):
    """Fill neighbour rows [lo, hi); returns the largest row population seen.

    A return value above ``stride`` signals overflow: the caller rebuilds with
    a larger stride. Each row only stores partners j > i, scanning the 27-cell
    neighbourhood with wrapped duplicates removed.
    """
    ncx = cells_per_axis[0]
    ncy = cells_per_axis[1]
    ncz = cells_per_axis[2]
    seen = np.empty(27, dtype=np.int64)
    needed_max = 0
    for i in range(lo, hi):
        ci = cell_of[i]
        cz = ci % ncz
        cy = (ci // ncz) % ncy
        cx = ci // (ncz * ncy)
        n_i = 0
        n_seen = 0
        for dx in range(-1, 2):
            ex = cx + dx
            sx = 0.0
            if ex < 0:
                if not periodic[0]:
                    continue
                ex += ncx
                sx = -extent[0]
            elif ex >= ncx:
                if not periodic[0]:
                    continue
                ex -= ncx
                sx = extent[0]
            for dy in range(-1, 2):
                ey = cy + dy
                sy = 0.0
                if ey < 0:
                    if not periodic[1]:
                        continue
                    ey += ncy
                    sy = -extent[1]
                elif ey >= ncy:
                    if not periodic[1]:
                        continue
                    ey -= ncy
                    sy = extent[1]
                for dz in range(-1, 2):
                    ez = cz + dz
                    sz = 0.0
                    if ez < 0:
                        if not periodic[2]:
                            continue
                        ez += ncz
                        sz = -extent[2]
                    elif ez >= ncz:
                        if not periodic[2]:
                            continue
                        ez -= ncz
                        sz = extent[2]
                    cj = (ex * ncy + ey) * ncz + ez
                    # small axes alias distinct offsets onto one cell; visit once
                    dup = False
                    for s in range(n_seen):
                        if seen[s] == cj:
                            dup = True
                            break
                    if dup:
                        continue
                    seen[n_seen] = cj
                    n_seen += 1
                    for idx in range(start[cj], start[cj + 1]):
                        j = order[idx]
                        if j <= i:
                            continue
                        ddx = positions[i, 0] - positions[j, 0]
                        ddy = positions[i, 1] - positions[j, 1]
                        ddz = positions[i, 2] - positions[j, 2]
                        ox = -extent[0] * np.rint(ddx / extent[0]) if periodic[0] else 0.0
                        oy = -extent[1] * np.rint(ddy / extent[1]) if periodic[1] else 0.0
                        oz = -extent[2] * np.rint(ddz / extent[2]) if periodic[2] else 0.0
                        ddx += ox
                        ddy += oy
                        ddz += oz
                        if ddx * ddx + ddy * ddy + ddz * ddz <= rn2:
                            if n_i < stride:
                                indices[i, n_i] = j
                                offsets[i, n_i, 0] = ox
                                offsets[i, n_i, 1] = oy
                                offsets[i, n_i, 2] = oz
                            n_i += 1
        counts[i] = n_i if n_i <= stride else stride
        if n_i > needed_max:
            needed_max = n_i
    return needed_max


def build_neighbour_matrix(grid, state, list_cutoff, workers=1):
    """Store every unordered pair within ``list_cutoff`` once (lower index row).

    The grid's cells must be at least ``list_cutoff`` wide so the 27-cell scan
    is exhaustive. Stride starts at 16 and doubles on overflow; overflow is
    never surfaced to callers.
    """
    if list_cutoff > np.min(grid.cell_side) + 1e-12:
        raise AtomsimError(
            f"list cutoff {list_cutoff} exceeds min cell side {np.min(grid.cell_side)}"
        )
    n = state.count
    domain = grid.domain
    rn2 = float(list_cutoff) * float(list_cutoff)
    stride = INITIAL_STRIDE
    while True:
        counts = np.zeros(n, dtype=np.int64)
        indices = np.zeros((n, stride), dtype=np.int64)
        offsets = np.zeros((n, stride, 3), dtype=np.float64)
        needed = np.zeros(workers if workers > 1 else 1, dtype=np.int64)

        def chunk(lo, hi, w):
            needed[w] = _nlist_rows(
                lo, hi, state.positions, domain.extent, domain.periodic,
                grid.cells_per_axis, grid.cell_side, grid.cell_of, grid.order,
                grid.start, rn2, stride, counts, indices, offsets,
            )

        run_chunked(chunk, n, workers)
        max_needed = int(needed.max(initial=0))
        if max_needed <= stride:
            return NeighbourMatrix(float(list_cutoff), stride, counts, indices, offsets)
        while stride < max_needed:
            stride *= 2


class NeighbourListManager:
    """Owns the rebuild policy for a Verlet-style neighbour matrix.

    Rebuilds when any particle has moved more than (r_n - r_c)/2 since the
    last build, or after 10 steps, whichever comes first; either trigger keeps
    every pair within r_c present in the stale list.
    """

    MAX_STEPS_BETWEEN_BUILDS = 10

    def __init__(self, domain, cutoff, list_cutoff, workers=1):
        if not list_cutoff > cutoff:
            raise AtomsimError("list cutoff must exceed the interaction cutoff")
        self.domain = domain
        self.cutoff = float(cutoff)
        self.list_cutoff = float(list_cutoff)
        self.workers = workers
        self.skin_half = 0.5 * (self.list_cutoff - self.cutoff)
        self.matrix = None
        self.grid = None
        self.steps_since_build = 0
        self.build_count = 0
        self._ref_positions = None

    def _max_displacement(self, state):
        delta = state.positions - self._ref_positions
        for d in range(3):
            if self.domain.periodic[d]:
                ext = self.domain.extent[d]
                delta[:, d] -= ext * np.rint(delta[:, d] / ext)
        return float(np.sqrt(np.max(np.sum(delta * delta, axis=1))))

    def needs_rebuild(self, state):
        if self.matrix is None:
            return True
        if self.steps_since_build >= self.MAX_STEPS_BETWEEN_BUILDS:
            return True
        return self._max_displacement(state) > self.skin_half

    def ensure(self, state):
        """Return a neighbour matrix valid at the current positions."""
        if self.needs_rebuild(state):
            self.grid = build_cell_grid(self.domain, self.list_cutoff, state)
            self.matrix = build_neighbour_matrix(
                self.grid, state, self.list_cutoff, workers=self.workers
            )
            self._ref_positions = state.positions.copy()
            self.steps_since_build = 0
            self.build_count += 1
        return self.matrix

    def advance_step(self):
        self.steps_since_build += 1
