"""Command-line drivers: ``evolve``, ``scf``, ``selftest`` and ``resume``.

Exit codes: 0 success, 2 configuration error, 3 numerical abort,
4 I/O error.  Setting ``BDFDYN_OUTPUT_DIR`` overrides ``output.directory``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .dynamics import NumericalAbort, EvolutionState, build_initial_state, observe, run
from .energy import build_gaussian_source
from .io import (
    ConfigError,
    CsvSink,
    SimulationConfig,
    SnapshotError,
    load_config,
    read_snapshot,
    write_snapshot,
)
from .kernels import free_vacuum
from .lattice import build_lattice
from .scf import ChargeTargetError, ScfSettings, SpectralGapError, charge_target_solve, scf_solve

logger = logging.getLogger("bdfdyn")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

OBSERVABLES_FILE = "observables.csv"
FINAL_SNAPSHOT = "final.bdfk"


def snapshot_name(step_index: int) -> str:
    return f"snapshot_{step_index:08d}.bdfk"


def _source(cfg: SimulationConfig):
    lat = build_lattice(cfg.lattice.h, cfg.lattice.cutoff)
    return build_gaussian_source(cfg.source.Z, cfg.source.width, cfg.source.alpha, lat)


def _scf_settings(cfg: SimulationConfig) -> ScfSettings:
    s = cfg.scf
    return ScfSettings(max_iter=s.max_iter, tol=s.tol, damping=s.damping, lam=s.lam, N=s.N)


def _initial_state(cfg: SimulationConfig, src) -> EvolutionState:
    mode = cfg.initial.mode
    if mode == "vacuum":
        return EvolutionState.from_projector(free_vacuum(src.lattice))
    if mode == "charged_free":
        return build_initial_state(cfg.initial.N, src, "free_orbitals")
    if mode == "charged_scf":
        return build_initial_state(cfg.initial.N, src, "scf_orbitals", _scf_settings(cfg))
    return read_snapshot(cfg.initial.snapshot_path, src.lattice)


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _evolve(cfg: SimulationConfig, state: EvolutionState, src, outdir: str, append: bool) -> EvolutionState:
    evo = cfg.evolve
    if evo is None:
        raise ConfigError("evolve: required section is missing")
    remaining = evo.n_steps - state.step_index
    interval = cfg.output.snapshot_interval

    def on_step(s):
        if interval and s.step_index % interval == 0:
            write_snapshot(s, os.path.join(outdir, snapshot_name(s.step_index)))

    with CsvSink(os.path.join(outdir, OBSERVABLES_FILE), append=append) as sink:
        final = run(
            state,
            evo.dt,
            max(remaining, 0),
            src,
            integrator=evo.integrator,
            sink=sink,
            record_interval=evo.record_interval,
            idempotence_hard_limit=evo.idempotence_hard_limit,
            emit_initial=not append,
            on_step=on_step,
        )
    write_snapshot(final, os.path.join(outdir, FINAL_SNAPSHOT))
    last = observe(final, src)
    _write_json(
        os.path.join(outdir, "run_report.json"),
        {"step_index": final.step_index, "t": final.t, "final": dict(zip(last.__dataclass_fields__, last.as_tuple()))},
    )
    return final


def cmd_evolve(args) -> int:
    cfg = load_config(args.config)
    src = _source(cfg)
    outdir = _outdir(cfg)
    state = _initial_state(cfg, src)
    final = _evolve(cfg, state, src, outdir, append=False)
    print(f"evolved to t = {final.t:.6g} ({final.step_index} steps); output in {outdir}")
    return EXIT_OK


def cmd_resume(args) -> int:
    cfg = load_config(args.config)
    src = _source(cfg)
    outdir = _outdir(cfg)
    state = read_snapshot(args.snapshot, src.lattice)
    final = _evolve(cfg, state, src, outdir, append=True)
    print(f"resumed from step {state.step_index} to step {final.step_index}; output in {outdir}")
    return EXIT_OK


def cmd_scf(args) -> int:
    cfg = load_config(args.config)
    src = _source(cfg)
    outdir = _outdir(cfg)
    settings = _scf_settings(cfg)
    if settings.N is not None:
        res = charge_target_solve(src, settings.N, settings)
    else:
        res = scf_solve(src, settings)
    _write_json(os.path.join(outdir, "scf_report.json"), res.summary())
    write_snapshot(EvolutionState.from_projector(res.P), os.path.join(outdir, "scf_state.bdfk"))
    print(json.dumps(res.summary(), indent=2, sort_keys=True))
    return EXIT_OK if res.converged else EXIT_NUMERICAL


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    cfg = load_config(args.config) if args.config else None
    report = run_selftest(cfg)
    print(report.format())
    if cfg is not None:
        outdir = _outdir(cfg)
        _write_json(os.path.join(outdir, "selftest_report.json"), report.as_dict())
    return EXIT_OK if report.passed else 1


def _outdir(cfg: SimulationConfig) -> str:
    outdir = cfg.output_directory()
    os.makedirs(outdir, exist_ok=True)
    return outdir


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bdfdyn", description="Mean-field Dirac sea dynamics on a momentum lattice.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="increase log verbosity")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evolve", help="time-evolve the configured initial state")
    p.add_argument("config")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("scf", help="solve for a self-consistent stationary state")
    p.add_argument("config")
    p.set_defaults(func=cmd_scf)

    p = sub.add_parser("selftest", help="run the invariant checks on a small lattice")
    p.add_argument("config", nargs="?")
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("resume", help="continue a run from a snapshot")
    p.add_argument("snapshot")
    p.add_argument("config")
    p.set_defaults(func=cmd_resume)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SpectralGapError, ChargeTargetError) as exc:
        # a gap or charge failure means the configured lambda / N is unusable
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, SnapshotError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
