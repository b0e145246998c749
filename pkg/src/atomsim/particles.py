"""Simulation domain, particle storage, and cubic-lattice setup."""

from dataclasses import dataclass

import numpy as np

from .errors import AtomsimError


@dataclass
class SimulationDomain:
    """Cuboid simulation box with per-axis periodicity flags."""

    extent: np.ndarray
    periodic: np.ndarray

    def __init__(self, extent, periodic=True):
        self.extent = np.asarray(extent, dtype=np.float64).reshape(3)
        if np.isscalar(periodic) or isinstance(periodic, bool):
            periodic = [bool(periodic)] * 3
        self.periodic = np.asarray(periodic, dtype=bool).reshape(3)
        if not np.all(self.extent > 0.0):
            raise AtomsimError(f"domain extents must be positive, got {self.extent}")

    @property
    def is_cubic(self):
        return bool(self.extent[0] == self.extent[1] == self.extent[2])


@dataclass
class ParticleState:
    """Positions, velocities, forces, masses and charges for N particles.

    All arrays share the same leading dimension N; positions are kept inside
    the owning domain (wrap after every move on periodic axes).
    """

    positions: np.ndarray
    velocities: np.ndarray = None
    forces: np.ndarray = None
    masses: np.ndarray = None
    charges: np.ndarray = None

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise AtomsimError("positions must have shape (N, 3)")
        n = self.positions.shape[0]
        if self.velocities is None:
            self.velocities = np.zeros((n, 3))
        if self.forces is None:
            self.forces = np.zeros((n, 3))
        if self.masses is None:
            self.masses = np.ones(n)
        if self.charges is None:
            self.charges = np.zeros(n)
        self.velocities = np.ascontiguousarray(self.velocities, dtype=np.float64)
        self.forces = np.ascontiguousarray(self.forces, dtype=np.float64)
        self.masses = np.ascontiguousarray(self.masses, dtype=np.float64)
        self.charges = np.ascontiguousarray(self.charges, dtype=np.float64)
        for name in ("velocities", "forces"):
            if getattr(self, name).shape != (n, 3):
                raise AtomsimError(f"{name} must have shape ({n}, 3)")
        for name in ("masses", "charges"):
            if getattr(self, name).shape != (n,):
                raise AtomsimError(f"{name} must have shape ({n},)")
        if not np.all(self.masses > 0.0):
            raise AtomsimError("masses must be positive")

    @property
    def count(self):
        return self.positions.shape[0]

    def copy(self):
        return ParticleState(
            self.positions.copy(),
            self.velocities.copy(),
            self.forces.copy(),
            self.masses.copy(),
            self.charges.copy(),
        )


def create_cubic_lattice(n_per_axis, a):
    """Fill a periodic cube with n_per_axis**3 particles at spacing ``a``.

    Particles sit at (i + 1/2) * a along each axis; velocities and forces are
    zero, masses one, charges zero.
    """
    if int(n_per_axis) != n_per_axis or n_per_axis < 1:
        raise AtomsimError(f"n_per_axis must be a positive integer, got {n_per_axis}")
    if not a > 0.0:
        raise AtomsimError(f"lattice spacing must be positive, got {a}")
    n_per_axis = int(n_per_axis)
    domain = SimulationDomain([n_per_axis * a] * 3, periodic=True)
    grid = (np.arange(n_per_axis) + 0.5) * a
    gx, gy, gz = np.meshgrid(grid, grid, grid, indexing="ij")
    positions = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    return domain, ParticleState(positions)


def wrap_positions(domain, positions):
    """Wrap positions into [0, extent) on periodic axes, in place."""
    for d in range(3):
        if not domain.periodic[d]:
            continue
        ext = domain.extent[d]
        np.mod(positions[:, d], ext, out=positions[:, d])
        # np.mod of a tiny negative value can round to extent itself
        over = positions[:, d] >= ext
        if np.any(over):
            positions[over, d] -= ext
    return positions


def minimum_image_displacement(domain, x_i, x_j):
    """Displacement x_i - x_j with each periodic component folded to <= extent/2."""
    d = np.asarray(x_i, dtype=np.float64) - np.asarray(x_j, dtype=np.float64)
    for k in range(3):
        if domain.periodic[k]:
            d[k] -= domain.extent[k] * np.rint(d[k] / domain.extent[k])
    return d


def alternating_charges(n_per_axis):
    """Charge pattern +1/-1 by lattice-site parity (rock-salt arrangement)."""
    idx = np.arange(n_per_axis)
    ix, iy, iz = np.meshgrid(idx, idx, idx, indexing="ij")
    parity = (ix + iy + iz) % 2
    return np.where(parity == 0, 1.0, -1.0).ravel()


def write_snapshot(path, state, comment=""):
    """Write the particle snapshot text format: N, comment, then ``id x y z q`` lines."""
    comment = comment.replace("\n", " ")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{state.count}\n")
        fh.write(f"{comment}\n")
        for i in range(state.count):
            x, y, z = (float(v) for v in state.positions[i])
            fh.write(f"{i} {x!r} {y!r} {z!r} {float(state.charges[i])!r}\n")


def read_snapshot(path):
    """Read the particle snapshot text format; returns (state, comment).

    Velocities and forces are zeroed and masses set to one; only positions and
    charges are stored in the format.
    """
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        try:
            n = int(header.strip())
        except ValueError as exc:
            raise AtomsimError(f"bad snapshot header {header!r}") from exc
        comment = fh.readline().rstrip("\n")
        positions = np.zeros((n, 3))
        charges = np.zeros(n)
        for _ in range(n):
            parts = fh.readline().split()
            if len(parts) != 5:
                raise AtomsimError(f"bad snapshot line: {parts!r}")
            i = int(parts[0])
            if not 0 <= i < n:
                raise AtomsimError(f"snapshot particle id {i} out of range")
            positions[i] = [float(parts[1]), float(parts[2]), float(parts[3])]
            charges[i] = float(parts[4])
    return ParticleState(positions, charges=charges), comment
