"""Benchmark driver: config parsing, thread sweeps, timing capture, CSV output.

Sweeping compute nodes needs a cluster; at desk scale the sweep axis is
threads within one machine, which every report header states. Strong-scaling
shape (speedup and parallel efficiency), not absolute times, is the
reproducible object.
"""

import statistics
import time as _time
from dataclasses import dataclass, field

import numpy as np

from . import kmc as kmc_mod
from .cells import NeighbourListManager
from .errors import (
    IoFailure,
    MalformedValue,
    MissingBenchmark,
    UnknownKey,
)
from .fmm import FmmConfig, build_tree, fmm_solve
from .lj import (
    IntegratorConfig,
    LjParams,
    compute_forces_and_potential,
    kinetic_energy,
    random_velocities,
    velocity_verlet_step,
)
from .particles import alternating_charges, create_cubic_lattice

BENCHMARKS = ("lj", "fmm", "fmm-only", "kmc")

CSV_HEADER = "benchmark,n_particles,threads,step,seconds"

_DEFAULTS = {
    "lj": dict(n_per_axis=40, a=0.945, steps=20, dt=0.005),
    "fmm": dict(n_per_axis=32, a=6.6, steps=3, p=10, levels=4, dt=0.005),
    "fmm-only": dict(n_per_axis=32, a=6.6, steps=3, p=10, levels=4),
    "kmc": dict(n_per_axis=32, a=1.0, steps=10, p=12, levels=4),
}

LJ_CUTOFF = 2.5
LJ_LIST_CUTOFF = 2.75
FMM_BENCH_CUTOFF = 4.0
LJ_INITIAL_KE = 0.01


@dataclass
class BenchmarkConfig:
    benchmark: str = None
    n_per_axis: int = None
    a: float = None
    steps: int = None
    thread_counts: list = field(default_factory=lambda: [1])
    p: int = None
    levels: int = None
    dt: float = None
    beta: float = 1.0
    fill_fraction: float = 0.125
    seed: int = 1234
    warmup_steps: int = 5
    output_path: str = "results.csv"
    trajectory_path: str = None

    def finalize(self):
        if self.benchmark not in BENCHMARKS:
            raise MissingBenchmark(
                f"benchmark must be one of {BENCHMARKS}, got {self.benchmark!r}"
            )
        for key, value in _DEFAULTS[self.benchmark].items():
            if getattr(self, key) is None:
                setattr(self, key, value)
        if self.steps is None or self.steps < 1:
            raise MalformedValue("steps must be >= 1")
        if not self.thread_counts:
            raise MalformedValue("thread_counts must be non-empty")
        if any(t < 1 for t in self.thread_counts):
            raise MalformedValue("thread counts must be positive")
        if list(self.thread_counts) != sorted(set(self.thread_counts)):
            raise MalformedValue("thread counts must be strictly increasing")
        if not 0.0 < self.fill_fraction <= 1.0:
            raise MalformedValue("fill must lie in (0, 1]")
        if self.warmup_steps < 0:
            raise MalformedValue("warmup must be >= 0")
        return self


@dataclass(frozen=True)
class TimingRecord:
    benchmark: str
    n_particles: int
    threads: int
    step: int
    seconds: float


_KEY_TYPES = {
    "benchmark": str,
    "n_per_axis": int,
    "a": float,
    "steps": int,
    "threads": "threads",
    "p": int,
    "levels": int,
    "dt": float,
    "beta": float,
    "fill": float,
    "seed": int,
    "warmup": int,
    "output": str,
    "trajectory": str,
}

_KEY_FIELDS = {
    "threads": "thread_counts",
    "fill": "fill_fraction",
    "warmup": "warmup_steps",
    "output": "output_path",
    "trajectory": "trajectory_path",
}


def _convert(key, raw):
    kind = _KEY_TYPES[key]
    try:
        if kind == "threads":
            values = [int(v) for v in str(raw).split(",") if v.strip() != ""]
            if not values:
                raise ValueError("empty thread list")
            return values
        return kind(raw)
    except (TypeError, ValueError) as exc:
        raise MalformedValue(f"bad value {raw!r} for key {key!r}") from exc


def parse_config_file(path):
    """Line-based ``key = value`` file with '#' comments; unknown keys are errors."""
    values = {}
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise MalformedValue(f"cannot read config file {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise MalformedValue(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in text.split("=", 1))
            if key not in _KEY_TYPES:
                raise UnknownKey(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _convert(key, raw)
    return values


def parse_config(argv):
    """Merge config-file values and command-line flags (flags win)."""
    flag_map = {
        "--benchmark": "benchmark",
        "--n-per-axis": "n_per_axis",
        "--a": "a",
        "--steps": "steps",
        "--threads": "threads",
        "--p": "p",
        "--levels": "levels",
        "--dt": "dt",
        "--beta": "beta",
        "--fill": "fill",
        "--seed": "seed",
        "--warmup": "warmup",
        "--output": "output",
        "--trajectory": "trajectory",
    }
    file_path = None
    flags = {}
    i = 0
    argv = list(argv)
    while i < len(argv):
        arg = argv[i]
        if arg == "--config":
            if i + 1 >= len(argv):
                raise MalformedValue("--config requires a path")
            file_path = argv[i + 1]
            i += 2
            continue
        if arg not in flag_map:
            raise UnknownKey(f"unknown flag {arg!r}")
        if i + 1 >= len(argv):
            raise MalformedValue(f"flag {arg!r} requires a value")
        key = flag_map[arg]
        flags[key] = _convert(key, argv[i + 1])
        i += 2

    values = parse_config_file(file_path) if file_path else {}
    values.update(flags)

    config = BenchmarkConfig()
    for key, value in values.items():
        setattr(config, _KEY_FIELDS.get(key, key), value)
    if config.benchmark is None:
        raise MissingBenchmark("no benchmark selected (use --benchmark)")
    return config.finalize()


@dataclass
class BenchmarkResult:
    config: BenchmarkConfig
    records: list
    final_energies: dict = field(default_factory=dict)
    trajectories: dict = field(default_factory=dict)
    proposal_seconds: dict = field(default_factory=dict)
    level_cell_counts: list = None


def _time_step(fn):
    t0 = _time.perf_counter()
    fn()
    t1 = _time.perf_counter()
    return max(t1 - t0, 1e-9)


def _run_lj(config, threads, result):
    domain, state = create_cubic_lattice(config.n_per_axis, config.a)
    params = LjParams(cutoff=LJ_CUTOFF)
    cfg = IntegratorConfig(config.dt)
    random_velocities(state, LJ_INITIAL_KE, np.random.default_rng(config.seed))
    manager = NeighbourListManager(domain, LJ_CUTOFF, LJ_LIST_CUTOFF, workers=threads)

    def force_provider(st):
        nlist = manager.ensure(st)
        return compute_forces_and_potential(st, nlist, params, domain, workers=threads)

    force_provider(state)
    reports = []

    def one_step():
        manager.advance_step()
        pot = velocity_verlet_step(state, domain, cfg, force_provider)
        reports.append(pot + kinetic_energy(state))

    records = []
    for _ in range(config.warmup_steps):
        one_step()
    for step in range(config.steps):
        seconds = _time_step(one_step)
        records.append(TimingRecord("lj", state.count, threads, step, seconds))
    result.final_energies[threads] = reports[-1]
    return records


def _run_fmm(config, threads, result, solve_only):
    domain, state = create_cubic_lattice(config.n_per_axis, config.a)
    state.charges[:] = alternating_charges(config.n_per_axis)
    fmm_config = FmmConfig(num_terms=config.p, num_levels=config.levels)
    tree = build_tree(domain, state, fmm_config)
    result.level_cell_counts = tree.level_cell_counts
    name = "fmm-only" if solve_only else "fmm"

    last = {}
    if solve_only:
        def one_step():
            tree.refresh_occupancy(state)
            last["solve"] = fmm_solve(tree, state, workers=threads)
            last["energy"] = last["solve"].energy
    else:
        params = LjParams(cutoff=FMM_BENCH_CUTOFF)
        cfg = IntegratorConfig(config.dt)
        random_velocities(state, LJ_INITIAL_KE,
                          np.random.default_rng(config.seed))
        manager = NeighbourListManager(domain, FMM_BENCH_CUTOFF,
                                       1.1 * FMM_BENCH_CUTOFF, workers=threads)

        def force_provider(st):
            nlist = manager.ensure(st)
            return compute_forces_and_potential(st, nlist, params, domain,
                                                workers=threads)

        force_provider(state)

        def one_step():
            manager.advance_step()
            pot = velocity_verlet_step(state, domain, cfg, force_provider)
            tree.refresh_occupancy(state)
            solve = fmm_solve(tree, state, workers=threads)
            last["energy"] = pot + kinetic_energy(state) + solve.energy

    records = []
    for _ in range(config.warmup_steps):
        one_step()
    for step in range(config.steps):
        seconds = _time_step(one_step)
        records.append(TimingRecord(name, state.count, threads, step, seconds))
    result.final_energies[threads] = last["energy"]
    return records


def _run_kmc(config, threads, result):
    kmc_config = kmc_mod.KmcConfig(
        lattice_per_axis=config.n_per_axis,
        site_spacing=config.a,
        beta=config.beta,
        fmm=FmmConfig(num_terms=config.p, num_levels=config.levels),
    )
    state = kmc_mod.create_kmc_state(kmc_config, config.fill_fraction, config.seed,
                                     workers=threads)
    rng = np.random.default_rng(config.seed)
    kmc_mod.run_kmc(state, config.warmup_steps, workers=threads, rng=rng)
    steps = kmc_mod.run_kmc(state, config.steps, workers=threads, rng=rng)
    records = [
        TimingRecord("kmc", state.charge_count, threads, rec.step, rec.wall_seconds)
        for rec in steps
    ]
    # renumber timed steps from zero
    records = [
        TimingRecord("kmc", state.charge_count, threads, i, r.seconds)
        for i, r in enumerate(records)
    ]
    result.trajectories[threads] = [
        (rec.charge_id, rec.source_site, rec.dest_site, rec.delta_u, rec.delta_t)
        for rec in steps
    ]
    result.proposal_seconds[threads] = [rec.proposal_seconds for rec in steps]
    result.final_energies[threads] = float(sum(rec.delta_u for rec in steps))
    return records, steps


def run_benchmark(config):
    """Sweep thread counts over one benchmark; the physics is fixed by the seed.

    Each thread count rebuilds the identical system, runs the warmup untimed,
    then times every step. A failure mid-sweep propagates after the records
    collected so far are attached to the exception.
    """
    result = BenchmarkResult(config, [])
    all_steps = []
    for threads in config.thread_counts:
        try:
            if config.benchmark == "lj":
                records = _run_lj(config, threads, result)
            elif config.benchmark == "fmm":
                records = _run_fmm(config, threads, result, solve_only=False)
            elif config.benchmark == "fmm-only":
                records = _run_fmm(config, threads, result, solve_only=True)
            else:
                records, steps = _run_kmc(config, threads, result)
                all_steps = steps
            result.records.extend(records)
        except Exception as exc:
            exc.partial_records = result.records
            raise
    if config.benchmark == "kmc" and config.trajectory_path:
        kmc_mod.write_trajectory(config.trajectory_path, all_steps)
    return result


def write_csv(records, path):
    """Emit the timing table; header is byte-exact, reals keep >= 9 digits."""
    if not records:
        raise IoFailure("refusing to write an empty record set")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(CSV_HEADER + "\n")
            for rec in records:
                fh.write(
                    f"{rec.benchmark},{rec.n_particles},{rec.threads},"
                    f"{rec.step},{rec.seconds:.12g}\n"
                )
    except OSError as exc:
        raise IoFailure(f"could not write {path}: {exc}") from exc


def read_csv(path):
    """Parse a file produced by write_csv back into TimingRecords."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != CSV_HEADER:
            raise IoFailure(f"unexpected CSV header {header!r}")
        for line in fh:
            bench, n, threads, step, seconds = line.rstrip("\n").split(",")
            records.append(TimingRecord(bench, int(n), int(threads), int(step),
                                        float(seconds)))
    return records


def summarize(records, level_cell_counts=None, proposal_seconds=None):
    """Median seconds/step per thread count with speedup and parallel efficiency.

    When per-level cell counts are supplied (fmm benchmarks), levels with
    fewer cells than the largest swept thread count are flagged as idle-prone.
    """
    if not records:
        return "no records"
    by_threads = {}
    for rec in records:
        by_threads.setdefault(rec.threads, []).append(rec.seconds)
    threads = sorted(by_threads)
    t_min = threads[0]
    med_min = statistics.median(by_threads[t_min])
    lines = [
        "note: single-node run; the sweep axis is threads, standing in for nodes",
        f"{'threads':>8} {'median s/step':>14} {'speedup':>8} {'efficiency':>11}",
    ]
    for t in threads:
        med = statistics.median(by_threads[t])
        speedup = med_min / med if med > 0 else float("inf")
        efficiency = speedup * t_min / t
        lines.append(f"{t:>8} {med:>14.6g} {speedup:>8.3g} {efficiency:>11.3g}")
    if proposal_seconds:
        lines.append("")
        lines.append(f"{'threads':>8} {'proposal s/step':>16} {'speedup':>8}")
        base = statistics.median(proposal_seconds[min(proposal_seconds)])
        for t in sorted(proposal_seconds):
            med = statistics.median(proposal_seconds[t])
            lines.append(f"{t:>8} {med:>16.6g} {base / med if med > 0 else float('inf'):>8.3g}")
    if level_cell_counts is not None:
        max_workers = max(threads)
        lines.append("")
        lines.append(f"{'level':>6} {'cells':>8}  note (vs {max_workers} workers)")
        for level, cells in enumerate(level_cell_counts):
            note = "cells < workers: some workers idle" if cells < max_workers else ""
            lines.append(f"{level:>6} {cells:>8}  {note}")
    return "\n".join(lines)
