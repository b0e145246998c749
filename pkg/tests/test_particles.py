import numpy as np
import pytest

from atomsim.errors import AtomsimError
from atomsim.particles import (
    ParticleState,
    SimulationDomain,
    create_cubic_lattice,
    minimum_image_displacement,
    read_snapshot,
    wrap_positions,
    write_snapshot,
)


def test_lattice_small():
    domain, state = create_cubic_lattice(2, 1.0)
    assert state.count == 8
    assert np.allclose(domain.extent, [2.0, 2.0, 2.0])
    assert np.allclose(state.positions[0], [0.5, 0.5, 0.5])
    assert np.all(state.velocities == 0.0) and np.all(state.forces == 0.0)
    assert np.all(state.masses == 1.0) and np.all(state.charges == 0.0)


def test_lattice_million_sites():
    domain, state = create_cubic_lattice(100, 0.945)
    assert state.count == 10 ** 6
    assert np.allclose(domain.extent, 94.5)


def test_lattice_single_site():
    domain, state = create_cubic_lattice(1, 6.6)
    assert state.count == 1
    assert np.allclose(state.positions[0], [3.3, 3.3, 3.3])


def test_lattice_rejects_bad_inputs():
    with pytest.raises(AtomsimError):
        create_cubic_lattice(0, 1.0)
    with pytest.raises(AtomsimError):
        create_cubic_lattice(4, -1.0)
    with pytest.raises(AtomsimError):
        SimulationDomain([1.0, 0.0, 1.0])


def test_minimum_image_wraps_across_boundary():
    domain = SimulationDomain([10.0, 10.0, 10.0])
    d = minimum_image_displacement(domain, [0.1, 0.0, 0.0], [9.9, 0.0, 0.0])
    assert np.allclose(d, [0.2, 0.0, 0.0])


def test_minimum_image_identity():
    domain = SimulationDomain([10.0, 10.0, 10.0])
    x = np.array([3.0, 4.0, 5.0])
    assert np.all(minimum_image_displacement(domain, x, x) == 0.0)


def test_minimum_image_non_periodic_axis():
    domain = SimulationDomain([10.0, 10.0, 10.0], periodic=[False, True, True])
    d = minimum_image_displacement(domain, [0.1, 2.0, 2.0], [9.9, 2.0, 2.0])
    assert d[0] == pytest.approx(-9.8)


def test_minimum_image_antisymmetry_exact():
    domain = SimulationDomain([7.0, 9.0, 11.0], periodic=[True, True, False])
    rng = np.random.default_rng(11)
    for _ in range(200):
        a = rng.uniform(0.0, domain.extent)
        b = rng.uniform(0.0, domain.extent)
        ab = minimum_image_displacement(domain, a, b)
        ba = minimum_image_displacement(domain, b, a)
        assert np.all(ab == -ba)


def test_wrap_positions_half_open():
    domain = SimulationDomain([10.0, 10.0, 10.0])
    pos = np.array([[10.0, -1e-18, 25.0]])
    wrap_positions(domain, pos)
    assert np.all(pos >= 0.0) and np.all(pos < 10.0)


def test_state_shape_validation():
    with pytest.raises(AtomsimError):
        ParticleState(np.zeros((4, 2)))
    with pytest.raises(AtomsimError):
        ParticleState(np.zeros((4, 3)), masses=np.zeros(4))


def test_snapshot_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    state = ParticleState(rng.uniform(0, 5, (17, 3)), charges=rng.normal(size=17))
    path = tmp_path / "snap.txt"
    write_snapshot(path, state, comment="unit test snapshot")
    loaded, comment = read_snapshot(path)
    assert comment == "unit test snapshot"
    assert np.array_equal(loaded.positions, state.positions)
    assert np.array_equal(loaded.charges, state.charges)
    lines = path.read_text().splitlines()
    assert lines[0] == "17"
    assert lines[2].split()[0] == "0"
    assert len(lines) == 2 + 17
