#!/usr/bin/env python3
"""
dispml - command-line launcher

    python run.py certify --scenario lorentz --expect unstable
    python run.py assemble --scenario debye-cfs --paper-literal-s3
    python run.py simulate --scenario upml-decay --out runs/upml
    python run.py fixedpoint --scenario saturable

Exit codes: 0 ok, 1 toolkit error, 2 configuration error, 3 expectation mismatch.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError

from blocksys import InvalidVariantParams, Variant, assemble, symbolic_rows, tf_equivalence_check
from certify import (
    HalfPlaneGrid,
    MaterialLaw,
    check_m2m3,
    default_grid,
    find_gamma,
    find_nu0_block,
    find_nu0_stability,
    search_modified_r,
)
from config import ConfigError, ConfigManager, ToolConfig, list_scenarios
from data_persistence import ReportStore, RunManifest, write_schemas
from matlaw import PmlStretch
from nlsolve import picard_solve
from tdsim import Simulator, field_snapshot, fit_decay_rate, reference_config, run_reference_pair
from utils import DispmlError, Expectation, __version__, configure_logging, run_timestamp
from wspace import weighted_norm

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_MISMATCH = 3

MIN_PYTHON = (3, 11)

# Config sections each command cross-checks before running.
COMMAND_SECTIONS = {
    "certify": ("stretch",),
    "assemble": ("assemble", "stretch"),
    "simulate": ("simulate",),
    "fixedpoint": ("simulate", "fixedpoint"),
}


def check_python_version() -> bool:
    """tomllib needs Python 3.11"""
    if sys.version_info < MIN_PYTHON:
        print(f"Python {'.'.join(map(str, MIN_PYTHON))} or higher is required (running {sys.version.split()[0]})")
        return False
    return True


# certify

def _certify_grid(config: ToolConfig, law: MaterialLaw) -> HalfPlaneGrid:
    grid = default_grid(law)
    section = config.certify
    return HalfPlaneGrid(nu_values=grid.nu_values, t_max=section.t_max or grid.t_max,
                         t_count=section.t_count, log_spaced=grid.log_spaced)


def _block_stretch(variant: Variant, config: ToolConfig) -> Optional[PmlStretch]:
    return None if variant == Variant.DISPERSION else config.stretch


def cmd_certify(config: ToolConfig, store: ReportStore) -> Tuple[int, str]:
    section = config.certify
    law = MaterialLaw(config.material, config.stretch, config.certify_component(), section.exclusion_radius)
    grid = _certify_grid(config, law)
    report: Dict = {"scenario": config.scenario}

    if section.search_correction_radius:
        radius, cert = search_modified_r(config.material, grid)
        report["correction_radius"] = radius
    elif section.nu_edge is not None:
        cert = find_gamma(law, section.nu_edge, grid, section.tol_gamma)
    else:
        cert = find_nu0_stability(law, grid, tol_gamma=section.tol_gamma)
    report.update(cert.to_dict())
    stable = cert.accretive and cert.nu0 > 0

    if section.block_variant is not None:
        system = assemble(section.block_variant, config.material, _block_stretch(section.block_variant, config))
        edge, block_cert = find_nu0_block(system, tol_gamma=section.tol_gamma)
        report["block"] = {"variant": section.block_variant.value, "edge": edge,
                           "gamma": block_cert.gamma, "verdict": block_cert.verdict.value}
        if section.block_variant in (Variant.CFS_VACUUM, Variant.DISPERSION_CFS):
            report["notes"].append("stability verdict comes from the scalar law; the block entry reports "
                                   "the edge of the auxiliary-field form on its own")

    if section.clause_checks:
        clauses = check_m2m3(config.material, grid, section.tol_gamma)
        report["clauses"] = clauses.to_dict()["clauses"]
        failed = [c.name for c in clauses.clauses if c.applicable and not c.passed]
        if failed:
            LOGGER.info("Material clauses not satisfied: %s", ", ".join(failed))

    exit_code = EXIT_OK
    expect_note = ""
    if config.expect is not None:
        report["expect"] = config.expect.value
        matched = stable == (config.expect == Expectation.STABLE)
        expect_note = f" (expected {config.expect.value}: {'ok' if matched else 'MISMATCH'})"
        if not matched:
            exit_code = EXIT_MISMATCH

    store.write_report("certificate", report)
    summary = (f"certify {config.scenario}: {cert.verdict.value} nu0={cert.nu0:.6g} "
               f"gamma={cert.gamma:.3g} [{'stable' if stable else 'not stable'}]{expect_note}")
    return exit_code, summary


# assemble

def cmd_assemble(config: ToolConfig, store: ReportStore) -> Tuple[int, str]:
    section = config.assemble
    stretch = _block_stretch(section.variant, config) or PmlStretch()
    system = assemble(section.variant, config.material, stretch, paper_literal_s3=section.paper_literal_s3)
    tf_report = tf_equivalence_check(system, config.material, stretch, section.sample_count, section.seed)

    store.write_report("blocksystem", {**system.to_dict(), "rows": symbolic_rows(system)})
    store.write_report("tf_report", {**tf_report.to_dict(), "paper_literal_s3": section.paper_literal_s3})
    status = "PASS" if tf_report.passed else "FAIL"
    summary = (f"assemble {section.variant.value}: dim {system.dim}, transfer functions {status} "
               f"(electric {tf_report.max_rel_error_electric:.2e}, magnetic {tf_report.max_rel_error_magnetic:.2e})")
    return (EXIT_OK if tf_report.passed else EXIT_MISMATCH), summary


# simulate

def _probe_stats(frame: pd.DataFrame) -> Dict[str, Dict[str, float]]:
    stats = {}
    for name in frame.columns:
        if name.startswith("E@"):
            values = frame[name].to_numpy()
            stats[name] = {"max_abs": float(np.max(np.abs(values))), "rms": float(np.sqrt(np.mean(values ** 2)))}
    return stats


def cmd_simulate(config: ToolConfig, store: ReportStore) -> Tuple[int, str]:
    section = config.simulate
    if section.decay_window is not None and "energy" not in section.record:
        raise ConfigError("simulate.decay_window needs 'energy' in simulate.record")
    sim_cfg = section.to_sim_config(config.material)
    sim = Simulator(sim_cfg)
    result = sim.run()
    frame = result.series.to_frame()
    store.write_csv("timeseries.csv", frame)

    summary = {
        "variant": sim_cfg.variant.value,
        "n_cells": sim_cfg.grid.n_cells,
        "dx": sim_cfg.grid.dx,
        "dt": sim.dt,
        "n_steps": sim_cfg.n_steps,
        "cfl_ratio": sim.dt / sim_cfg.cfl_limit,
        "sigma_max": sim_cfg.grid.pml.resolved_sigma_max(sim_cfg.grid.dx, config.material.eps_inf,
                                                         config.material.mu),
        "probes": _probe_stats(frame),
    }
    if "energy" in frame:
        summary["energy_peak"] = float(frame["energy"].max())
        summary["energy_final"] = float(frame["energy"].iloc[-1])
    if "energy_phys" in frame:
        summary["energy_phys_final"] = float(frame["energy_phys"].iloc[-1])
    if "state_energy" in frame:
        summary["state_energy_final"] = float(frame["state_energy"].iloc[-1])
    if summary["probes"]:
        store.write_csv("probes.csv", frame[["time", *summary["probes"]]])

    line = f"simulate {sim_cfg.variant.value}: {sim_cfg.n_steps} steps, dt={sim.dt:.4g}"
    if section.decay_window is not None:
        rate, r_squared = fit_decay_rate(result.series, "energy", section.decay_window)
        summary.update(decay_rate=rate, r_squared=r_squared, decay_window=list(section.decay_window))
        line += f", decay rate {rate:.5g} (R^2 {r_squared:.4f})"
    if section.reflection:
        reflection = run_reference_pair(sim_cfg, reference_config(sim_cfg, section.reference_factor))
        store.write_csv("reflection.csv", reflection.to_frame())
        summary["reflection_db"] = reflection.reflection_db
        line += f", reflection {reflection.reflection_db:.1f} dB"
    if section.snapshot:
        store.write_csv("snapshot.csv", field_snapshot(result.state, sim_cfg.grid))

    summary["files"] = list(store.outputs)
    store.write_report("summary", summary)
    return EXIT_OK, line


# fixedpoint

def cmd_fixedpoint(config: ToolConfig, store: ReportStore) -> Tuple[int, str]:
    section = config.fixedpoint
    sim_cfg = config.simulate.to_sim_config(config.material)
    nl = section.build(sim_cfg.resolved_dt())
    result = picard_solve(sim_cfg, nl, section.nu, section.max_iter, section.tol)
    store.write_csv("iterations.csv", result.log_frame())
    solution = result.solution
    store.write_csv("solution.csv", pd.DataFrame({"x": sim_cfg.grid.e_positions(), "E": solution.values[-1]}))

    report = {"kind": section.kind, **result.to_dict()}
    line = (f"fixedpoint {section.kind}: converged in {result.iterations} iterations, "
            f"residual {result.residual:.2e}, predicted ratio {result.predicted_ratio:.3g}")
    if section.nu_compare is not None:
        other = picard_solve(sim_cfg, nl, section.nu_compare, section.max_iter, section.tol)
        reference_norm = weighted_norm(solution)
        gap = weighted_norm(solution - other.solution.with_nu(section.nu))
        report.update(nu_compare=section.nu_compare,
                      compare_rel_diff=gap / reference_norm if reference_norm > 0 else gap)
        line += f", nu={section.nu_compare:g} rel. difference {report['compare_rel_diff']:.2e}"
    store.write_report("fixedpoint", report)
    return EXIT_OK, line


COMMANDS: Dict[str, Callable[[ToolConfig, ReportStore], Tuple[int, str]]] = {
    "certify": cmd_certify,
    "assemble": cmd_assemble,
    "simulate": cmd_simulate,
    "fixedpoint": cmd_fixedpoint,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML (or .json) config layered over the scenario")
    common.add_argument("--out", help="output directory (default <output.out_dir>/<scenario>/<command>)")
    common.add_argument("--scenario", help="named scenario under scenarios/")
    common.add_argument("--expect", choices=[e.value for e in Expectation], help="expected stability verdict")
    common.add_argument("--seed", type=int, help="seed for random frequency sampling")
    common.add_argument("--paper-literal-s3", action="store_true",
                        help="assemble the S3 row with the L1 & L2 sum left empty")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")

    parser = argparse.ArgumentParser(prog="dispml", description="Dispersive Maxwell + PML certification toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("certify", parents=[common], help="half-plane accretivity certificate")
    commands.add_parser("assemble", parents=[common], help="block system and transfer-function check")
    commands.add_parser("simulate", parents=[common], help="1D time-domain run")
    commands.add_parser("fixedpoint", parents=[common], help="Picard solve with a nonlinear polarization")
    commands.add_parser("scenarios", help="list named scenarios")
    schemas = commands.add_parser("schemas", help="write report JSON schemas")
    schemas.add_argument("--out", default=str(Path(__file__).resolve().parent / "docs" / "schemas"))
    return parser


def _overrides(args: argparse.Namespace) -> Dict:
    overrides = {}
    if args.expect:
        overrides["expect"] = args.expect
    if args.seed is not None:
        overrides["assemble.seed"] = args.seed
    if args.paper_literal_s3:
        overrides["assemble.paper_literal_s3"] = True
    if args.log_level:
        overrides["output.log_level"] = args.log_level
    return overrides


def run_command(args: argparse.Namespace, manager: Optional[ConfigManager] = None) -> int:
    manager = manager or ConfigManager()
    store = None
    exit_code = EXIT_ERROR
    config = None
    try:
        config = manager.load_config(args.scenario, args.config, _overrides(args))
        configure_logging(config.output.log_level)
        problems = manager.validate_config(config, COMMAND_SECTIONS[args.command])
        if problems:
            raise ConfigError("configuration failed validation", problems)

        out_dir = Path(args.out) if args.out else Path(config.output.out_dir) / config.scenario / args.command
        store = ReportStore(out_dir)
        exit_code, summary = COMMANDS[args.command](config, store)
        print(summary)
    except ConfigError as exc:
        LOGGER.error("%s", exc)
        for problem in exc.errors:
            LOGGER.error("  %s", problem)
        return EXIT_CONFIG
    except (ValidationError, InvalidVariantParams) as exc:
        LOGGER.error("Invalid configuration: %s", exc)
        return EXIT_CONFIG
    except DispmlError as exc:
        LOGGER.error("%s failed: %s", args.command, exc)
        exit_code = EXIT_ERROR

    if store is not None:
        manifest = RunManifest(command=args.command, config_path=args.config, scenario=config.scenario,
                               output_dir=str(store.out_dir), seed=config.assemble.seed,
                               timestamp=run_timestamp(), config=config.model_dump(mode="json"),
                               outputs=list(store.outputs), exit_code=exit_code)
        store.write_manifest(manifest)
    return exit_code


def main(argv: Optional[List[str]] = None) -> int:
    if not check_python_version():
        return EXIT_ERROR
    args = build_parser().parse_args(argv)
    configure_logging(getattr(args, "log_level", None))

    if args.command == "scenarios":
        for name in list_scenarios():
            print(name)
        return EXIT_OK
    if args.command == "schemas":
        for path in write_schemas(args.out):
            print(path)
        return EXIT_OK
    return run_command(args)


if __name__ == "__main__":
    sys.exit(main())
