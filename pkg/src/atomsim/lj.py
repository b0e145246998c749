"""Lennard-Jones forces over the neighbour matrix and velocity-Verlet dynamics."""

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .cells import NeighbourListManager
from .errors import AtomsimError, NonPositiveDistance
from .particles import wrap_positions
from .threads import run_chunked


@dataclass
class LjParams:
    """12-6 pair potential truncated at ``cutoff``; optionally shifted to zero there."""

    epsilon: float = 1.0
    sigma: float = 1.0
    cutoff: float = 2.5
    shifted: bool = False

    def __post_init__(self):
        if self.epsilon <= 0.0 or self.sigma <= 0.0 or self.cutoff <= 0.0:
            raise AtomsimError("epsilon, sigma and cutoff must be positive")
        if not self.cutoff > self.sigma:
            raise AtomsimError(
                f"cutoff {self.cutoff} must exceed sigma {self.sigma}; the "
                "truncation would remove the attractive well entirely"
            )

    @property
    def cutoff_energy(self):
        s6 = (self.sigma / self.cutoff) ** 6
        return 4.0 * self.epsilon * (s6 * s6 - s6)


@dataclass
class IntegratorConfig:
    dt: float = 0.005

    def __post_init__(self):
        if not self.dt > 0.0:
            raise AtomsimError("dt must be positive")


@dataclass(frozen=True)
class EnergyReport:
    potential: float
    kinetic: float
    total: float

    @classmethod
    def of(cls, potential, kinetic):
        return cls(potential, kinetic, potential + kinetic)


def lj_pair_energy(r, params):
    """Pair energy at scalar distance r; exactly zero beyond the cutoff."""
    if r <= 0.0:
        raise NonPositiveDistance(f"pair distance must be positive, got {r}")
    if r > params.cutoff:
        return 0.0
    s6 = (params.sigma / r) ** 6
    e = 4.0 * params.epsilon * (s6 * s6 - s6)
    if params.shifted:
        e -= params.cutoff_energy
    return e


def lj_pair_force(disp, params):
    """Force on particle i for displacement ``disp`` = x_i - x_j (equals -grad_i V)."""
    disp = np.asarray(disp, dtype=np.float64)
    r2 = float(np.dot(disp, disp))
    if r2 <= 0.0:
        raise NonPositiveDistance("pair displacement must be nonzero")
    if r2 > params.cutoff * params.cutoff:
        return np.zeros(3)
    inv_r2 = 1.0 / r2
    s6 = (params.sigma * params.sigma * inv_r2) ** 3
    coef = 24.0 * params.epsilon * inv_r2 * (2.0 * s6 * s6 - s6)
    return coef * disp


@njit(cache=True, nogil=True)
def _force_rows(lo, hi, positions, counts, indices, extent, inv_extent, periodic,
                eps, sig2, rc2, shift_e, fbuf):
    """Accumulate pair forces for rows [lo, hi) into this worker's buffer.

    The minimum image is re-folded per pair (positions wrap every step, so
    image shifts frozen at list build time would go stale). One division per
    in-range pair: everything else is additions and multiplications.
    """
    pot = 0.0
    status = 0
    for i in range(lo, hi):
        for k in range(counts[i]):
            j = indices[i, k]
            dx = positions[i, 0] - positions[j, 0]
            dy = positions[i, 1] - positions[j, 1]
            dz = positions[i, 2] - positions[j, 2]
            if periodic[0]:
                dx -= extent[0] * np.rint(dx * inv_extent[0])
            if periodic[1]:
                dy -= extent[1] * np.rint(dy * inv_extent[1])
            if periodic[2]:
                dz -= extent[2] * np.rint(dz * inv_extent[2])
            r2 = dx * dx + dy * dy + dz * dz
            if r2 > rc2:
                continue
            if r2 <= 0.0:
                status = 1
                continue
            inv_r2 = 1.0 / r2
            s6 = (sig2 * inv_r2) * (sig2 * inv_r2) * (sig2 * inv_r2)
            s12 = s6 * s6
            pot += 4.0 * eps * (s12 - s6) - shift_e
            coef = 24.0 * eps * inv_r2 * (2.0 * s12 - s6)
            fbuf[i, 0] += coef * dx
            fbuf[i, 1] += coef * dy
            fbuf[i, 2] += coef * dz
            fbuf[j, 0] -= coef * dx
            fbuf[j, 1] -= coef * dy
            fbuf[j, 2] -= coef * dz
    return pot, status


@njit(cache=True, nogil=True)
def _merge_buffers(lo, hi, buffers, out):
    for w in range(buffers.shape[0]):
        for i in range(lo, hi):
            out[i, 0] += buffers[w, i, 0]
            out[i, 1] += buffers[w, i, 1]
            out[i, 2] += buffers[w, i, 2]


def compute_forces_and_potential(state, nlist, params, domain, workers=1):
    """Overwrite state.forces with LJ pair forces; return the truncated potential.

    Pairs are partitioned by row across workers into private force buffers,
    merged in worker order so a fixed worker count reproduces bitwise.
    """
    n = state.count
    shift_e = params.cutoff_energy if params.shifted else 0.0
    buffers = np.zeros((workers, n, 3))
    pots = np.zeros(workers)
    stats = np.zeros(workers, dtype=np.int64)
    inv_extent = 1.0 / domain.extent

    def chunk(lo, hi, w):
        pots[w], stats[w] = _force_rows(
            lo, hi, state.positions, nlist.counts, nlist.indices,
            domain.extent, inv_extent, domain.periodic,
            params.epsilon, params.sigma * params.sigma,
            params.cutoff * params.cutoff, shift_e, buffers[w],
        )

    run_chunked(chunk, n, workers)
    if stats.any():
        raise NonPositiveDistance("overlapping particles in force evaluation")
    state.forces[:] = 0.0

    def merge(lo, hi, w):
        _merge_buffers(lo, hi, buffers, state.forces)

    run_chunked(merge, n, workers)
    return float(np.sum(pots))


def kinetic_energy(state):
    """Sum of (1/2) m v.v over all particles."""
    v2 = np.sum(state.velocities * state.velocities, axis=1)
    return 0.5 * float(np.dot(state.masses, v2))


def random_velocities(state, kinetic_per_particle, rng):
    """Seeded uniform velocities rescaled to a target kinetic energy per particle.

    Centre-of-mass momentum is removed before scaling, so the drift stays zero.
    """
    v = rng.uniform(-1.0, 1.0, size=state.velocities.shape)
    mass = state.masses[:, None]
    v -= np.sum(mass * v, axis=0) / np.sum(state.masses)
    ke = 0.5 * float(np.sum(mass * v * v))
    target = kinetic_per_particle * state.count
    if ke > 0.0 and target > 0.0:
        v *= math.sqrt(target / ke)
    else:
        v[:] = 0.0
    state.velocities[:] = v


def velocity_verlet_step(state, domain, cfg, force_provider):
    """One velocity-Verlet step; returns the potential from the end-of-step forces.

    ``force_provider(state)`` must fill state.forces for the current positions
    and return the potential energy. Positions wrap on periodic axes.
    """
    inv_m = 1.0 / state.masses[:, None]
    half = 0.5 * cfg.dt
    state.velocities += half * state.forces * inv_m
    state.positions += cfg.dt * state.velocities
    wrap_positions(domain, state.positions)
    potential = force_provider(state)
    state.velocities += half * state.forces * inv_m
    return potential


def run_md(state, domain, params, cfg, steps, workers=1, list_cutoff=None):
    """Run NVE molecular dynamics; one EnergyReport per step.

    The neighbour matrix rebuilds when any particle moves beyond half the
    skin, or at latest every 10 steps.
    """
    if list_cutoff is None:
        list_cutoff = 1.1 * params.cutoff
    manager = NeighbourListManager(domain, params.cutoff, list_cutoff, workers=workers)

    def force_provider(st):
        nlist = manager.ensure(st)
        return compute_forces_and_potential(st, nlist, params, domain, workers=workers)

    force_provider(state)
    reports = []
    for _ in range(steps):
        manager.advance_step()
        potential = velocity_verlet_step(state, domain, cfg, force_provider)
        reports.append(EnergyReport.of(potential, kinetic_energy(state)))
    return reports
