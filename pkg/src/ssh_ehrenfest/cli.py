"""Command-line entry point.

Subcommands: optimize, modes, spectrum, run, analyze, verify. Every command
accepts ``--config FILE`` (flat ``key = value``) and ``--set key=value``
overrides; an empty configuration reproduces the standard SSH parameter set.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config, parse_triad
from .ensemble import EXIT_CONFIG, EXIT_MONITOR, EXIT_OK, EXIT_PARTIAL, EnsembleFailure, load_ensemble, run_ensemble, write_outputs
from .groundstate import NotAMinimumError, OptimizationError, hessian_and_modes, optimize_geometry
from .observables import analyze
from .oracle import BasisTooLargeError, occupation_classes

log = logging.getLogger("ssh_ehrenfest")


def _config(args) -> RunConfig:
    overrides = {}
    for item in args.set or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = val.strip()
    for key in ("n_sites", "n_traj", "seed", "dt", "t_max", "record_stride", "workers", "output", "chunk_size", "checkpoint_interval"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = str(val)
    if getattr(args, "nondeterministic", False):
        overrides["nondeterministic"] = "true"
    return load_config(args.config, overrides)


def _out(path):
    return open(path, "w", newline="") if path else contextlib.nullcontext(sys.stdout)


def cmd_optimize(args) -> int:
    cfg = _config(args)
    geom = optimize_geometry(cfg.params, tolerance=args.tolerance)
    with _out(args.output) as fh:
        fh.write(f"# bo_energy_eV: {geom.bo_energy:.10f}\n")
        fh.write(f"# electronic_energy_eV: {geom.electronic_energy:.10f}\n")
        fh.write(f"# residual_force_norm: {geom.residual_force_norm:.3e}\n")
        fh.write(f"# homo_lumo_gap_eV: {geom.gap:.6f}\n")
        w = csv.writer(fh)
        w.writerow(["site", "u_angstrom", "orbital_energy_eV"])
        for n in range(cfg.n_sites):
            w.writerow([n + 1, f"{geom.u_star[n]:.10f}", f"{geom.orbital_energies[n]:.10f}"])
    return EXIT_OK


def cmd_modes(args) -> int:
    cfg = _config(args)
    prm = cfg.params
    geom = optimize_geometry(prm)
    modes = hessian_and_modes(prm, geom, fd_step=args.fd_step)
    with _out(args.output) as fh:
        fh.write(f"# hessian_asymmetry: {modes.asymmetry:.3e}\n")
        w = csv.writer(fh)
        w.writerow(["mode", "omega_rad_per_fs", "hbar_omega_eV", "period_fs"] + [f"site_{n + 1}" for n in modes.free_sites])
        for k, om in enumerate(modes.frequencies):
            w.writerow([k + 1, f"{om:.10f}", f"{prm.hbar * om:.10f}", f"{2 * np.pi / om:.6f}"] + [f"{x:.8f}" for x in modes.mode_vectors[:, k]])
    return EXIT_OK


def cmd_spectrum(args) -> int:
    cfg = _config(args)
    geom = optimize_geometry(cfg.params)
    n = cfg.n_sites
    with _out(args.output) as fh:
        w = csv.writer(fh)
        if args.many_body:
            try:
                classes = occupation_classes(geom.orbital_energies, n // 2, n // 2)
            except BasisTooLargeError as exc:
                raise ConfigError(str(exc)) from exc
            fh.write(f"# occupation_classes: {len(classes)}\n")
            w.writerow(["label", "energy_eV", "multiplicity"])
            for label, e, m in classes:
                w.writerow([label, f"{round(e, 9) + 0.0:.6f}", m])
        else:
            w.writerow(["orbital", "energy_eV"])
            for k, e in enumerate(geom.orbital_energies):
                w.writerow([k, f"{e:.10f}"])
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    try:
        mean, _ = run_ensemble(cfg)
    except EnsembleFailure as exc:
        log.error("%s (%d trajectories)", exc, len(exc.failed))
        return EXIT_MONITOR
    if mean.failed:
        log.warning("%d trajectories aborted: %s", len(mean.failed), mean.failed)
        return EXIT_PARTIAL
    log.info("wrote %s (%d trajectories)", cfg.output, mean.n_traj)
    return EXIT_OK


def cmd_analyze(args) -> int:
    path = Path(args.ensemble)
    if path.is_dir():
        path = path / "ensemble.npz"
    cfg, mean = load_ensemble(path)
    triad = args.triad if args.triad is not None else cfg.triad
    cfg = cfg.replace(triad=triad)
    result = analyze(mean, cfg.params, parse_triad(triad, cfg.n_sites) if triad else None)
    outdir = Path(args.output) if args.output else path.parent
    outdir.mkdir(parents=True, exist_ok=True)
    write_outputs(outdir, cfg, result)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_checks

    ok = True
    for name, passed, detail in run_checks(seed=args.seed, n_random=args.n_random):
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if ok else EXIT_MONITOR


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ssh-ehrenfest", description="Ehrenfest dynamics of SSH chains")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a configuration key")
        p.add_argument("--n-sites", dest="n_sites", type=int)
        return p

    p = common(sub.add_parser("optimize", help="dimerized ground-state geometry (CSV)"))
    p.add_argument("--tolerance", type=float, default=1e-8)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_optimize)

    p = common(sub.add_parser("modes", help="harmonic normal modes at the optimized geometry (CSV)"))
    p.add_argument("--fd-step", type=float, default=1e-4)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_modes)

    p = common(sub.add_parser("spectrum", help="orbital energies or many-body occupation classes (CSV)"))
    p.add_argument("--many-body", action="store_true", help="list spin-summed occupation classes and energies")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_spectrum)

    p = common(sub.add_parser("run", help="run or resume a trajectory ensemble"))
    p.add_argument("--n-traj", dest="n_traj", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--t-max", dest="t_max", type=float)
    p.add_argument("--record-stride", dest="record_stride", type=int)
    p.add_argument("--chunk-size", dest="chunk_size", type=int)
    p.add_argument("--checkpoint-interval", dest="checkpoint_interval", type=float, help="fs between mid-chunk checkpoints")
    p.add_argument("--workers", type=int)
    p.add_argument("--nondeterministic", action="store_true", help="merge chunks as they finish (faster, not bit-reproducible)")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="recompute CSV outputs from ensemble.npz")
    p.add_argument("ensemble", help="run directory or ensemble.npz")
    p.add_argument("--triad", help="three occupation labels, e.g. '(2110),(2101),(1210)'")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("verify", help="cross-check the engine against the Fock-space oracle")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-random", type=int, default=100)
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (OptimizationError, NotAMinimumError) as exc:
        log.error("%s", exc)
        return EXIT_MONITOR


if __name__ == "__main__":
    sys.exit(main())
