"""Wigner-sampled trajectory ensembles: chunked execution, checkpoints and output files.

Trajectory ``i`` draws its initial condition from the stream ``(seed, i)``.
Trajectories are grouped into fixed-size chunks; each chunk is propagated as
one batch and reduced to running sums. Chunk sums are merged in chunk order,
so results do not depend on the worker count. Because every trajectory in a
batch is advanced independently, a chunk with monitor failures is simply
re-run with the failed members masked out, which leaves survivors bit-identical.
"""

from __future__ import annotations

import csv
import json
import logging
import multiprocessing as mp
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, dump_config, parse_initial_state, parse_triad
from .dynamics import IntegratorConfig, TrajectoryBatch
from .electronic import adiabatic_basis
from .groundstate import NormalModes, OptimizedGeometry, hessian_and_modes, optimize_geometry, sample_wigner, trajectory_rng
from .model import NuclearPhase, build_h_e
from .observables import Analysis, EnsembleMean, EnsembleSums, analyze

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

EXIT_OK, EXIT_CONFIG, EXIT_MONITOR, EXIT_PARTIAL = 0, 1, 2, 3


class EnsembleFailure(RuntimeError):
    def __init__(self, message, failed):
        super().__init__(message)
        self.failed = failed


@dataclass
class Setup:
    cfg: RunConfig
    geom: OptimizedGeometry
    modes: NormalModes
    reference: np.ndarray  # adiabatic orbitals at the optimized geometry, for phase fixing


def prepare(cfg: RunConfig) -> Setup:
    prm = cfg.params
    geom = optimize_geometry(prm)
    modes = hessian_and_modes(prm, geom)
    ref = adiabatic_basis(build_h_e(prm, geom.u_star)).orbitals
    return Setup(cfg, geom, modes, ref)


def initial_conditions(setup: Setup, indices) -> tuple[list[NuclearPhase], list]:
    """Wigner phase points and initial states for the given trajectory indices.

    Each state uses the adiabatic orbitals at its own sampled geometry.
    """
    cfg = setup.cfg
    prm = cfg.params
    spec = parse_initial_state(cfg.initial_state, prm.n_sites)
    phases, states = [], []
    for i in indices:
        ph = sample_wigner(setup.modes, prm, setup.geom, trajectory_rng(cfg.seed, int(i)))
        orb = adiabatic_basis(build_h_e(prm, ph.u), reference=setup.reference).orbitals
        phases.append(ph)
        states.append(spec.build(orb.astype(complex)))
    return phases, states


def integrator_config(cfg: RunConfig) -> IntegratorConfig:
    return IntegratorConfig(cfg.dt, cfg.t_max, cfg.record_stride, cfg.energy_tol, cfg.orthonormality_tol)


def chunk_ranges(n_traj: int, chunk_size: int) -> list[range]:
    return [range(s, min(s + chunk_size, n_traj)) for s in range(0, n_traj, chunk_size)]


def _checkpoint_path(outdir: Path, chunk: int, partial: bool = False) -> Path:
    return outdir / "checkpoints" / (f"chunk_{chunk:05d}" + (".partial.npz" if partial else ".npz"))


def _save_npz(path: Path, **arrays) -> None:
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, **arrays)
    os.replace(tmp, path)


def _sums_to_arrays(s: EnsembleSums) -> dict:
    out = {"time": s.time, "populations": s.populations, "rdm1": s.rdm1, "u": s.u, "count": s.count, "failed": np.array(s.failed, dtype=np.int64)}
    if s.rdm2 is not None:
        out["rdm2"] = s.rdm2
    return out


def _sums_from_arrays(d) -> EnsembleSums:
    return EnsembleSums(
        d["time"], d["populations"], d["rdm1"], d["u"], d["rdm2"] if "rdm2" in d else None, int(d["count"]), [int(x) for x in d["failed"]]
    )


def run_chunk(setup: Setup, chunk: int, indices: range, outdir: Path | None = None) -> EnsembleSums:
    """Propagate one chunk to ``t_max`` and return its running sums.

    Trajectories that fail a monitor are excluded from every recorded time by
    re-running the chunk without them.
    """
    cfg = setup.cfg
    excluded = np.zeros(len(indices), dtype=bool)
    while True:
        sums, newly_failed, traj_records = _run_chunk_once(setup, chunk, indices, excluded, outdir)
        if not newly_failed.any():
            break
        log.warning("chunk %d: trajectories %s failed monitors; re-running without them", chunk, list(np.asarray(indices)[newly_failed]))
        excluded |= newly_failed
    sums.failed = sorted(int(i) for i in np.asarray(indices)[excluded])
    if outdir is not None:
        _save_npz(_checkpoint_path(outdir, chunk), config_hash=cfg.config_hash(), **_sums_to_arrays(sums))
        partial = _checkpoint_path(outdir, chunk, partial=True)
        if partial.exists():
            partial.unlink()
        if traj_records is not None:
            _save_npz(outdir / "trajectories" / f"chunk_{chunk:05d}.npz", indices=np.array(indices), **traj_records)
    return sums


def _run_chunk_once(setup: Setup, chunk: int, indices: range, excluded: np.ndarray, outdir: Path | None):
    cfg = setup.cfg
    icfg = integrator_config(cfg)
    phases, states = initial_conditions(setup, indices)
    batch = TrajectoryBatch.from_states(cfg.params, phases, states, with_rdm2=cfg.with_rdm2)
    batch.alive &= ~excluded
    times = cfg.dt * cfg.record_stride * np.arange(icfg.n_records)
    sums = EnsembleSums.zeros(times, cfg.params.n_sites, cfg.with_rdm2)
    keep_traj = cfg.save_trajectories and outdir is not None
    pops_hist, u_hist, e_hist = [], [], []
    start = 0
    partial = _checkpoint_path(outdir, chunk, partial=True) if outdir is not None else None
    if partial is not None and partial.exists() and not excluded.any():
        with np.load(partial) as d:
            if str(d["config_hash"]) == cfg.config_hash() and not keep_traj:
                batch.u[:] = d["batch_u"]
                batch.p[:] = d["batch_p"]
                batch.orbitals[:] = d["batch_orbitals"]
                batch.alive[:] = d["batch_alive"]
                batch.energy0[:] = d["batch_energy0"]
                batch.steps = int(d["batch_steps"])
                batch.time = float(d["batch_time"])
                start = int(d["next_record"])
                sums = _sums_from_arrays(d)
                log.info("chunk %d: resuming at record %d", chunk, start)
    newly_failed = np.zeros(batch.n_traj, dtype=bool)
    every = max(1, int(round(cfg.checkpoint_interval / (cfg.dt * cfg.record_stride)))) if cfg.checkpoint_interval > 0 else 0
    for r in range(start, icfg.n_records):
        if r > 0:
            batch.advance(cfg.record_stride, cfg.dt)
            status_failed = ~batch.alive & ~excluded & ~newly_failed
            newly_failed |= status_failed
            newly_failed |= batch.check_monitors(icfg)
        g1 = batch.rdm1()
        pops = batch.adiabatic_populations(g1)
        alive = batch.alive
        sums.rdm1[r] += g1[alive].sum(axis=0)
        sums.populations[r] += pops[alive].sum(axis=0)
        sums.u[r] += batch.u[alive].sum(axis=0)
        if sums.rdm2 is not None:
            sums.rdm2[r] += batch.rdm2()[alive].sum(axis=0) if alive.any() else 0.0
        if keep_traj:
            pops_hist.append(pops)
            u_hist.append(batch.u.copy())
            e_hist.append(batch.energies())
        if every and partial is not None and r % every == 0 and r + 1 < icfg.n_records and not newly_failed.any():
            _save_npz(
                partial, config_hash=cfg.config_hash(), next_record=r + 1,
                batch_u=batch.u, batch_p=batch.p, batch_orbitals=batch.orbitals, batch_alive=batch.alive,
                batch_energy0=batch.energy0, batch_steps=batch.steps, batch_time=batch.time, **_sums_to_arrays(sums),
            )
        if newly_failed.any():
            # the chunk will be re-run without these members; stop early
            return sums, newly_failed, None
    sums.count = int((~excluded).sum())
    traj_records = None
    if keep_traj:
        traj_records = {"time": times, "populations": np.array(pops_hist), "u": np.array(u_hist), "energy": np.array(e_hist), "alive": batch.alive}
    return sums, newly_failed, traj_records


def _worker(args):
    setup, chunk, indices, outdir = args
    return chunk, run_chunk(setup, chunk, indices, outdir)


def run_ensemble(cfg: RunConfig, outdir: str | Path | None = None, write: bool = True) -> tuple[EnsembleMean, Analysis]:
    """Run (or resume) the ensemble described by ``cfg`` and write its output files."""
    if cfg.seed is None:
        raise ConfigError("ensemble runs need a seed")
    outdir = Path(outdir if outdir is not None else cfg.output) if write else None
    if outdir is not None:
        (outdir / "checkpoints").mkdir(parents=True, exist_ok=True)
        if cfg.save_trajectories:
            (outdir / "trajectories").mkdir(exist_ok=True)
        (outdir / "config.txt").write_text(_config_text(cfg))
    setup = prepare(cfg)
    chunks = chunk_ranges(cfg.n_traj, cfg.chunk_size)
    done: dict[int, EnsembleSums] = {}
    todo = []
    for c, idx in enumerate(chunks):
        path = _checkpoint_path(outdir, c) if outdir is not None else None
        if path is not None and path.exists():
            with np.load(path) as d:
                if str(d["config_hash"]) == cfg.config_hash():
                    done[c] = _sums_from_arrays(d)
                    continue
        todo.append((setup, c, idx, outdir))
    log.info("%d chunks to run, %d restored from checkpoints", len(todo), len(done))
    if cfg.workers > 1 and len(todo) > 1:
        ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
        with ctx.Pool(cfg.workers) as pool:
            it = pool.imap_unordered(_worker, todo) if cfg.nondeterministic else pool.imap(_worker, todo)
            if cfg.nondeterministic:
                total = None
                for c, s in it:
                    total = s if total is None else total.merge(s)
                for s in done.values():
                    total = s if total is None else total.merge(s)
                return _finish(cfg, setup, total, outdir)
            for c, s in it:
                done[c] = s
    else:
        for job in todo:
            c, s = _worker(job)
            done[c] = s
    total = None
    for c in range(len(chunks)):
        total = done[c] if total is None else total.merge(done[c])
    return _finish(cfg, setup, total, outdir)


def _finish(cfg: RunConfig, setup: Setup, total: EnsembleSums, outdir: Path | None):
    if total.count == 0:
        raise EnsembleFailure("every trajectory failed its monitors", total.failed)
    mean = total.mean()
    triad = parse_triad(cfg.triad, cfg.n_sites) if cfg.triad else None
    result = analyze(mean, cfg.params, triad)
    if outdir is not None:
        save_ensemble(outdir / "ensemble.npz", cfg, mean)
        write_outputs(outdir, cfg, result)
    return mean, result


def _config_text(cfg: RunConfig) -> str:
    return f"# config_hash: {cfg.config_hash()}\n# code_version: {__version__}\n" + dump_config(cfg)


def save_ensemble(path: Path, cfg: RunConfig, mean: EnsembleMean) -> None:
    arrays = {
        "time": mean.time, "populations": mean.populations, "rdm1": mean.rdm1, "u": mean.u,
        "n_traj": mean.n_traj, "failed": np.array(mean.failed, dtype=np.int64),
        "config": json.dumps({**cfg.physical_dict(), "output": cfg.output}),
        "config_hash": cfg.config_hash(), "code_version": __version__,
    }
    if mean.rdm2 is not None:
        arrays["rdm2"] = mean.rdm2
    _save_npz(Path(path), **arrays)


def load_ensemble(path: str | Path) -> tuple[RunConfig, EnsembleMean]:
    with np.load(path) as d:
        cfg = RunConfig(**json.loads(str(d["config"])))
        mean = EnsembleMean(
            d["time"], d["populations"], d["rdm1"], d["u"], d["rdm2"] if "rdm2" in d else None,
            int(d["n_traj"]), [int(x) for x in d["failed"]],
        )
    return cfg, mean


def _header(cfg: RunConfig, schema: str, n_traj: int) -> list[str]:
    return [
        f"# schema: {schema}/{SCHEMA_VERSION}",
        f"# config_hash: {cfg.config_hash()}",
        f"# code_version: {__version__}",
        f"# n_traj: {n_traj}",
    ]


def _write_csv(path: Path, header: list[str], columns: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(line + "\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([f"{x:.10g}" if isinstance(x, (float, np.floating)) else x for x in row])
            fh.flush()


def write_outputs(outdir: Path, cfg: RunConfig, result: Analysis) -> None:
    """Write ``populations.csv``, ``purity.csv`` and (with a triad) ``states.csv``.

    Columns:
      populations.csv  time_fs, n_traj, n_1 .. n_N (ascending adiabatic orbitals)
      states.csv       time_fs, n_traj, p0, p1, p2, residual
      purity.csv       time_fs, n_traj, P1, P2, M1_P1, M1_P2, M2_P1, M2_P2, M3_P1, M3_P2
    Missing quantities are written as ``nan``.
    """
    outdir = Path(outdir)
    n = cfg.n_sites
    t = result.time
    nt = result.n_traj
    _write_csv(
        outdir / "populations.csv", _header(cfg, "populations", nt),
        ["time_fs", "n_traj"] + [f"n_{i + 1}" for i in range(n)],
        ([t[k], nt, *result.populations[k]] for k in range(len(t))),
    )
    if result.states is not None:
        _write_csv(
            outdir / "states.csv", _header(cfg, "states", nt),
            ["time_fs", "n_traj", "p0", "p1", "p2", "residual"],
            ([t[k], nt, *result.states.p[k], result.states.residual[k]] for k in range(len(t))),
        )
    nan = np.full(len(t), np.nan)
    p2 = result.p2 if result.p2 is not None else nan
    models = result.models or {}
    cols = ["time_fs", "n_traj", "P1", "P2"]
    series = [result.p1, p2]
    for m in ("M1", "M2", "M3"):
        for q in ("P1", "P2"):
            cols.append(f"{m}_{q}")
            series.append(models.get((m, q), nan))
    _write_csv(outdir / "purity.csv", _header(cfg, "purity", nt), cols, ([t[k], nt, *(s[k] for s in series)] for k in range(len(t))))


def read_csv(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read one of the output files; returns ``(header, columns)``."""
    header = {}
    with open(path) as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            header[key.strip()] = val.strip()
        else:
            body.append(line)
    rows = list(csv.reader(body))
    cols = rows[0]
    data = np.array(rows[1:], dtype=float).reshape(-1, len(cols))
    return header, {c: data[:, i] for i, c in enumerate(cols)}
