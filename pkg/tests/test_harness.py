import numpy as np
import pytest

from atomsim.cli import main as cli_main
from atomsim.errors import (
    IoFailure,
    MalformedValue,
    MissingBenchmark,
    UnknownKey,
)
from atomsim.harness import (
    CSV_HEADER,
    TimingRecord,
    parse_config,
    read_csv,
    run_benchmark,
    summarize,
    write_csv,
)


def tiny_lj_args(**overrides):
    base = dict(benchmark="lj", n_per_axis=6, steps=3, warmup=1, threads="1")
    base.update(overrides)
    argv = []
    for key, value in base.items():
        argv += [f"--{key.replace('_', '-')}", str(value)]
    return argv


def test_parse_flags_basic():
    config = parse_config(["--benchmark", "lj", "--n-per-axis", "16",
                           "--steps", "100"])
    assert config.benchmark == "lj"
    assert config.n_per_axis == 16
    assert config.n_per_axis ** 3 == 4096
    assert config.steps == 100
    assert config.a == 0.945  # benchmark default spacing applies


def test_parse_defaults_per_benchmark():
    from atomsim.harness import FMM_BENCH_CUTOFF, LJ_CUTOFF, LJ_LIST_CUTOFF
    config = parse_config(["--benchmark", "fmm"])
    assert (config.p, config.levels, config.a) == (10, 4, 6.6)
    config = parse_config(["--benchmark", "kmc"])
    assert config.p == 12 and config.fill_fraction == 0.125
    # fixed physics constants echo the reference parameterization
    assert (LJ_CUTOFF, LJ_LIST_CUTOFF, FMM_BENCH_CUTOFF) == (2.5, 2.75, 4.0)


def test_parse_missing_config_file():
    with pytest.raises(MalformedValue):
        parse_config(["--config", "/nonexistent/bench.cfg"])


def test_flag_overrides_file(tmp_path):
    cfg = tmp_path / "bench.cfg"
    cfg.write_text("benchmark = fmm\np = 12  # file value\n")
    config = parse_config(["--config", str(cfg), "--p", "10"])
    assert config.p == 10


def test_file_only_values(tmp_path):
    cfg = tmp_path / "bench.cfg"
    cfg.write_text("# comment line\nbenchmark = kmc\nfill = 0.25\nthreads = 1,2\n")
    config = parse_config(["--config", str(cfg)])
    assert config.benchmark == "kmc"
    assert config.fill_fraction == 0.25
    assert config.thread_counts == [1, 2]


def test_unknown_key_rejected(tmp_path):
    cfg = tmp_path / "bench.cfg"
    cfg.write_text("benchmark = lj\nbogus_key = 3\n")
    with pytest.raises(UnknownKey):
        parse_config(["--config", str(cfg)])
    with pytest.raises(UnknownKey):
        parse_config(["--benchmark", "lj", "--frobnicate", "1"])


def test_malformed_value_rejected():
    with pytest.raises(MalformedValue):
        parse_config(["--benchmark", "lj", "--steps", "many"])
    with pytest.raises(MalformedValue):
        parse_config(["--benchmark", "lj", "--threads", "2,1"])
    with pytest.raises(MalformedValue):
        parse_config(["--benchmark", "lj", "--steps", "0"])


def test_missing_or_invalid_benchmark():
    with pytest.raises(MissingBenchmark):
        parse_config(["--steps", "5"])
    with pytest.raises(MissingBenchmark):
        parse_config(["--benchmark", "xyz"])


def test_write_csv_schema_and_rows(tmp_path):
    records = [TimingRecord("lj", 8, t, s, 0.001 * (s + 1))
               for t in (1, 2) for s in range(10)]
    path = tmp_path / "out.csv"
    write_csv(records, path)
    lines = path.read_text().splitlines()
    assert lines[0] == CSV_HEADER == "benchmark,n_particles,threads,step,seconds"
    assert len(lines) == 21
    assert lines[1] == "lj,8,1,0,0.001"


def test_write_csv_empty_refuses(tmp_path):
    path = tmp_path / "nothing.csv"
    with pytest.raises(IoFailure):
        write_csv([], path)
    assert not path.exists()


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    records = [TimingRecord("kmc", 100, 1, s, float(rng.uniform(1e-5, 1.0)))
               for s in range(20)]
    path = tmp_path / "rt.csv"
    write_csv(records, path)
    loaded = read_csv(path)
    assert len(loaded) == len(records)
    for got, ref in zip(loaded, records):
        assert (got.benchmark, got.n_particles, got.threads, got.step) == \
            (ref.benchmark, ref.n_particles, ref.threads, ref.step)
        assert got.seconds == float(f"{ref.seconds:.12g}")


def summary_row(text, first_token):
    for line in text.splitlines():
        parts = line.split()
        if parts and parts[0] == first_token:
            return parts
    raise AssertionError(f"no row starting with {first_token!r} in:\n{text}")


def test_summarize_even_times():
    records = [TimingRecord("lj", 8, 1, s, 0.1) for s in range(5)]
    records += [TimingRecord("lj", 8, 2, s, 0.1) for s in range(5)]
    text = summarize(records)
    row1 = summary_row(text, "1")
    row2 = summary_row(text, "2")
    assert float(row1[2]) == 1.0 and float(row1[3]) == 1.0
    assert float(row2[2]) == 1.0 and float(row2[3]) == 0.5


def test_summarize_ideal_scaling():
    records = [TimingRecord("lj", 8, 1, s, 0.2) for s in range(5)]
    records += [TimingRecord("lj", 8, 2, s, 0.1) for s in range(5)]
    row2 = summary_row(summarize(records), "2")
    assert float(row2[2]) == 2.0 and float(row2[3]) == 1.0


def test_summarize_flags_idle_levels():
    records = [TimingRecord("fmm", 8, t, 0, 0.1) for t in (1, 16)]
    text = summarize(records, level_cell_counts=[1, 8, 64])
    flagged = [l for l in text.splitlines() if "idle" in l]
    assert len(flagged) == 2
    assert {l.split()[0] for l in flagged} == {"0", "1"}
    level2 = summary_row(text, "2")
    assert level2[1] == "64" and "idle" not in " ".join(level2)


def test_run_benchmark_monotone_work():
    r1 = run_benchmark(parse_config(tiny_lj_args(steps=2)))
    r2 = run_benchmark(parse_config(tiny_lj_args(steps=4)))
    assert len(r2.records) == 2 * len(r1.records)


def test_run_benchmark_identical_system_across_threads():
    config = parse_config(tiny_lj_args(steps=3, threads="1,2"))
    result = run_benchmark(config)
    e1 = result.final_energies[1]
    e2 = result.final_energies[2]
    assert e1 == pytest.approx(e2, rel=1e-8)
    steps = sorted({r.step for r in result.records})
    assert steps == [0, 1, 2]
    threads_order = [r.threads for r in result.records]
    assert threads_order == sorted(threads_order)


def test_run_benchmark_fmm_md_variant():
    config = parse_config(["--benchmark", "fmm", "--n-per-axis", "6", "--p", "6",
                           "--levels", "3", "--steps", "2", "--warmup", "1",
                           "--threads", "1,2"])
    result = run_benchmark(config)
    assert len(result.records) == 4
    assert all(r.benchmark == "fmm" for r in result.records)
    assert result.level_cell_counts == [1, 8, 64]
    # fmm energy enters the per-step reduction, so totals must also agree
    assert result.final_energies[1] == pytest.approx(result.final_energies[2],
                                                     rel=1e-8)


def test_run_benchmark_kmc_trajectory_identical_across_threads():
    config = parse_config(["--benchmark", "kmc", "--n-per-axis", "12", "--p", "6",
                           "--levels", "3", "--steps", "4", "--warmup", "1",
                           "--threads", "1,2"])
    result = run_benchmark(config)
    assert result.trajectories[1] == result.trajectories[2]


def test_cli_runs_and_writes(tmp_path, capsys):
    out = tmp_path / "cli.csv"
    code = cli_main(tiny_lj_args() + ["--output", str(out)])
    assert code == 0
    assert out.exists()
    text = capsys.readouterr().out
    assert "median s/step" in text
    assert read_csv(out)


def test_cli_error_exit_code(capsys):
    assert cli_main(["--benchmark", "nope"]) == 1
    assert "error:" in capsys.readouterr().err


def test_cli_help():
    assert cli_main(["--help"]) == 0
