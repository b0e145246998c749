"""Command-line entry point for the benchmark harness."""

import sys

from .errors import AtomsimError
from .harness import parse_config, run_benchmark, summarize, write_csv

USAGE = """\
usage: atomsim --benchmark {lj|fmm|fmm-only|kmc} [options]

options:
  --benchmark NAME     benchmark to run (required unless set in --config)
  --n-per-axis N       particles (lj/fmm) or lattice sites (kmc) per axis
  --a X                lattice spacing
  --steps N            timed steps per thread count
  --threads LIST       comma-separated thread counts, ascending (default 1)
  --p N                expansion degrees (fmm/kmc)
  --levels N           octree levels (fmm/kmc)
  --dt X               integrator time step (lj/fmm)
  --beta X             hop-rate inverse temperature (kmc)
  --fill X             occupied-site fraction in (0, 1] (kmc)
  --seed N             RNG seed shared by every thread count
  --warmup N           untimed steps before timing (default 5)
  --config FILE        'key = value' file; flags override file values
  --output PATH        CSV output path (default results.csv)
  --trajectory PATH    KMC trajectory log path
"""


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    if argv in ([], ["-h"], ["--help"]):
        print(USAGE)
        return 0
    try:
        config = parse_config(argv)
        result = run_benchmark(config)
        write_csv(result.records, config.output_path)
        print(summarize(
            result.records,
            level_cell_counts=result.level_cell_counts,
            proposal_seconds=result.proposal_seconds or None,
        ))
        print(f"wrote {len(result.records)} records to {config.output_path}")
    except AtomsimError as exc:
        partial = getattr(exc, "partial_records", None)
        if partial:
            try:
                write_csv(partial, config.output_path)
                print(f"flushed {len(partial)} partial records to "
                      f"{config.output_path}", file=sys.stderr)
            except AtomsimError:
                pass
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
