import numpy as np
import pytest

from atomsim.errors import CoincidentParticles, NonCubicDomain
from atomsim.fmm import FmmConfig, build_tree, fmm_solve, near_field_direct
from atomsim.oracle import direct_coulomb
from atomsim.particles import ParticleState, SimulationDomain

UNIT_CUBE = SimulationDomain([1.0, 1.0, 1.0], periodic=False)


def random_charges(n, seed, domain=UNIT_CUBE):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(0.0, 1.0, (n, 3)) * domain.extent
    q = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    return ParticleState(pos, charges=q)


def test_tree_level_arity():
    state = random_charges(20, 0)
    tree = build_tree(UNIT_CUBE, state, FmmConfig(num_terms=4, num_levels=2))
    assert tree.level_cell_counts == [1, 8]


def test_tree_six_levels_finest_count():
    state = random_charges(10, 1)
    tree = build_tree(UNIT_CUBE, state, FmmConfig(num_terms=2, num_levels=6))
    assert tree.level_cell_counts[-1] == 32768


def test_tree_single_particle_occupancy():
    state = ParticleState(np.array([[0.5, 0.5, 0.5]]), charges=np.array([1.0]))
    tree = build_tree(UNIT_CUBE, state, FmmConfig(num_terms=4, num_levels=3))
    occupied = [c for c in range(tree.n_cells[2]) if tree.start[c] != tree.start[c + 1]]
    assert len(occupied) == 1


def test_tree_rejects_non_cubic_domain():
    domain = SimulationDomain([1.0, 2.0, 1.0], periodic=False)
    with pytest.raises(NonCubicDomain):
        build_tree(domain, random_charges(5, 2, UNIT_CUBE), FmmConfig(4, 3))


def test_interaction_lists_match_definition():
    state = random_charges(5, 3)
    tree = build_tree(UNIT_CUBE, state, FmmConfig(num_terms=2, num_levels=4))
    for level in (2, 3):
        na = tree.n_axis[level]
        for flat in range(0, tree.n_cells[level], 7):
            tz = flat % na
            ty = (flat // na) % na
            tx = flat // (na * na)
            expected = set()
            for sx in range(na):
                for sy in range(na):
                    for sz in range(na):
                        if max(abs(sx - tx), abs(sy - ty), abs(sz - tz)) <= 1:
                            continue  # own 27-neighbourhood
                        if max(abs(sx // 2 - tx // 2), abs(sy // 2 - ty // 2),
                               abs(sz // 2 - tz // 2)) > 1:
                            continue  # parent not in parent's 27-neighbourhood
                        expected.add((sx * na + sy) * na + sz)
            got = {src for src, _ in tree.interaction_list(level, flat)}
            assert got == expected
            assert len(got) <= 189


def test_near_field_pair_energy():
    domain = SimulationDomain([8.0, 8.0, 8.0], periodic=False)
    state = ParticleState(np.array([[3.0, 4.0, 4.0], [5.0, 4.0, 4.0]]),
                          charges=np.array([1.0, -1.0]))
    tree = build_tree(domain, state, FmmConfig(num_terms=4, num_levels=2))
    pots, energy = near_field_direct(tree, state)
    assert energy == pytest.approx(-0.5, rel=1e-14)
    assert np.allclose(pots, [-0.5, 0.5], rtol=1e-14)


def test_near_field_single_particle():
    state = ParticleState(np.array([[0.5, 0.5, 0.5]]), charges=np.array([3.0]))
    tree = build_tree(UNIT_CUBE, state, FmmConfig(num_terms=4, num_levels=3))
    pots, energy = near_field_direct(tree, state)
    assert energy == 0.0 and np.all(pots == 0.0)


def test_near_field_cluster_matches_masked_oracle():
    rng = np.random.default_rng(4)
    # 20 charges inside one finest cell of an L=3 tree (cell width 1/4)
    pos = 0.5 + rng.uniform(-0.1, 0.1, (20, 3))
    q = rng.uniform(-1, 1, 20)
    state = ParticleState(pos, charges=q)
    tree = build_tree(UNIT_CUBE, state, FmmConfig(num_terms=4, num_levels=3))
    pots, _ = near_field_direct(tree, state)
    _, ref = direct_coulomb(state)  # all pairs are near here
    assert np.allclose(pots, ref, rtol=1e-13)


def test_near_field_coincident_raises():
    state = ParticleState(np.array([[0.5, 0.5, 0.5], [0.5, 0.5, 0.5]]),
                          charges=np.array([1.0, 1.0]))
    tree = build_tree(UNIT_CUBE, state, FmmConfig(num_terms=4, num_levels=2))
    with pytest.raises(CoincidentParticles):
        near_field_direct(tree, state)


def test_solve_two_charges_coulomb_law():
    state = ParticleState(np.array([[0.3, 0.5, 0.5], [0.7, 0.5, 0.5]]),
                          charges=np.array([1.0, -1.0]))
    tree = build_tree(UNIT_CUBE, state, FmmConfig(num_terms=12, num_levels=3))
    res = fmm_solve(tree, state)
    assert res.energy == pytest.approx(-1.0 / 0.4, rel=1e-6)


def test_solve_zero_charges():
    state = random_charges(50, 5)
    state.charges[:] = 0.0
    tree = build_tree(UNIT_CUBE, state, FmmConfig(num_terms=6, num_levels=3))
    res = fmm_solve(tree, state)
    assert res.energy == 0.0
    assert np.all(res.potentials == 0.0)


def test_solve_matches_oracle_mean_error():
    state = random_charges(1000, 6)
    tree = build_tree(UNIT_CUBE, state, FmmConfig(num_terms=12, num_levels=3))
    res = fmm_solve(tree, state)
    _, ref = direct_coulomb(state)
    rel = np.abs(res.potentials - ref) / np.abs(ref)
    assert rel.mean() <= 1e-4


def test_solve_convergence_in_p():
    state = random_charges(500, 7)
    _, ref = direct_coulomb(state)
    errs = {}
    for p in (4, 12):
        tree = build_tree(UNIT_CUBE, state, FmmConfig(num_terms=p, num_levels=3))
        res = fmm_solve(tree, state)
        errs[p] = float(np.mean(np.abs(res.potentials - ref) / np.abs(ref)))
    assert errs[12] <= errs[4] / 10.0


def test_solve_linearity_in_charge():
    state = random_charges(200, 8)
    state.charges *= np.random.default_rng(8).uniform(0.5, 1.5, 200)
    tree = build_tree(UNIT_CUBE, state, FmmConfig(num_terms=8, num_levels=3))
    base = fmm_solve(tree, state)
    doubled = ParticleState(state.positions.copy(), charges=2.0 * state.charges)
    tree2 = build_tree(UNIT_CUBE, doubled, FmmConfig(num_terms=8, num_levels=3))
    res2 = fmm_solve(tree2, doubled)
    assert np.allclose(res2.potentials, 2.0 * base.potentials, rtol=1e-12)
    assert res2.energy == pytest.approx(4.0 * base.energy, rel=1e-12)


def test_source_partition_is_exact():
    # near set union far set covers every other particle exactly once
    state = random_charges(100, 9)
    tree = build_tree(UNIT_CUBE, state, FmmConfig(num_terms=4, num_levels=4))
    finest = tree.finest
    na = tree.n_axis[finest]

    def coords(flat, n):
        return flat // (n * n), (flat // n) % n, flat % n

    cell_members = {c: set(tree.order[tree.start[c]:tree.start[c + 1]])
                    for c in range(tree.n_cells[finest])}
    for i in range(state.count):
        ci = tree.cell_of[i]
        cx, cy, cz = coords(ci, na)
        near = set()
        for c, members in cell_members.items():
            x, y, z = coords(c, na)
            if max(abs(x - cx), abs(y - cy), abs(z - cz)) <= 1:
                near |= members
        near.discard(i)
        far = set()
        for level in range(2, tree.num_levels):
            shift = tree.num_levels - 1 - level
            a_flat = ((cx >> shift) * tree.n_axis[level] + (cy >> shift)) \
                * tree.n_axis[level] + (cz >> shift)
            for src, _ in tree.interaction_list(level, a_flat):
                sx, sy, sz = coords(src, tree.n_axis[level])
                for c, members in cell_members.items():
                    x, y, z = coords(c, na)
                    if (x >> shift, y >> shift, z >> shift) == (sx, sy, sz):
                        far |= members
        assert near & far == set()
        assert near | far == set(range(state.count)) - {i}


def test_downward_pass_local_matches_far_field_oracle():
    # evaluate one finest cell's local expansion at 100 interior points and
    # compare against the direct sum over sources outside the cell's own
    # 27-neighbourhood (the exact set the local expansion represents)
    from atomsim.fmm.operators import LocalExpansion, evaluate_local
    from atomsim.fmm.solver import downward_pass, upward_pass

    state = random_charges(800, 12)
    tree = build_tree(UNIT_CUBE, state, FmmConfig(num_terms=12, num_levels=3))
    tree.zero_expansions()
    upward_pass(tree, state)
    downward_pass(tree)

    finest = tree.finest
    na = tree.n_axis[finest]
    cell = (na // 2 * na + na // 2) * na + na // 2
    cz = cell % na
    cy = (cell // na) % na
    cx = cell // (na * na)
    far_mask = np.array([
        max(abs(tree.cell_of[j] // (na * na) - cx),
            abs((tree.cell_of[j] // na) % na - cy),
            abs(tree.cell_of[j] % na - cz)) > 1
        for j in range(state.count)
    ])
    centre = tree.cell_centre(finest, cell)
    width = tree.cell_width[finest]
    local = LocalExpansion(centre, tree.locals_[finest][cell])
    rng = np.random.default_rng(99)
    points = centre + rng.uniform(-0.45, 0.45, (100, 3)) * width
    rel_errs = []
    for x in points:
        ref = float(np.sum(state.charges[far_mask]
                           / np.linalg.norm(state.positions[far_mask] - x, axis=1)))
        rel_errs.append(abs(evaluate_local(local, x) - ref) / abs(ref))
    assert max(rel_errs) <= 1e-4


def test_solve_worker_count_invariance():
    state = random_charges(300, 10)
    tree = build_tree(UNIT_CUBE, state, FmmConfig(num_terms=8, num_levels=3))
    res1 = fmm_solve(tree, state, workers=1)
    res3 = fmm_solve(tree, state, workers=3)
    # per-cell ownership means the result is identical, not merely close
    assert np.array_equal(res1.potentials, res3.potentials)
    assert res1.energy == res3.energy


def test_solve_reports_level_widths():
    state = random_charges(50, 11)
    tree = build_tree(UNIT_CUBE, state, FmmConfig(num_terms=4, num_levels=3))
    res = fmm_solve(tree, state, workers=16)
    assert res.level_cell_counts == [1, 8, 64]
    assert res.level_parallel_width == [1, 8, 16]
    for width, cells in zip(res.level_parallel_width, res.level_cell_counts):
        assert width <= cells
