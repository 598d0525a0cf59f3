"""Run configuration: flat ``key = value`` files with command-line overrides."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import re
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .electronic import Determinant, SuperpositionState, build_excited_state, level_index, state_from_labels
from .model import HBAR, SshParams


class ConfigError(ValueError):
    pass


# keys that change wall time or file locations but never results
_NON_PHYSICAL = {"output", "workers", "checkpoint_interval", "nondeterministic", "save_trajectories"}


@dataclass(frozen=True)
class RunConfig:
    # model
    n_sites: int = 4
    t0: float = 2.5
    alpha: float = 4.1
    k_spring: float = 21.0
    mass: float = 1349.14
    a_lattice: float = 1.22
    hbar: float = HBAR
    # initial electronic state and analysis triad
    initial_state: str = "HOMO->LUMO, HOMO->LUMO+1; b=0.7071067811865476,0.7071067811865476"
    triad: str = "(2110),(2101),(1210)"
    # ensemble
    n_traj: int = 1000
    seed: int | None = None
    chunk_size: int = 64
    # integrator
    dt: float = 0.01
    t_max: float = 1000.0
    record_stride: int = 100
    energy_tol: float = 1e-4
    orthonormality_tol: float = 1e-8
    record_rdm2: str = "auto"
    # execution
    output: str = "run"
    workers: int = 1
    checkpoint_interval: float = 0.0  # fs of simulated time between mid-chunk checkpoints; 0 disables
    nondeterministic: bool = False
    save_trajectories: bool = False

    def __post_init__(self):
        try:
            self.params
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.n_traj < 1:
            raise ConfigError("n_traj must be >= 1")
        if self.chunk_size < 1 or self.workers < 1:
            raise ConfigError("chunk_size and workers must be >= 1")
        if not self.dt > 0 or self.t_max < 0 or self.record_stride < 1:
            raise ConfigError("need dt > 0, t_max >= 0, record_stride >= 1")
        if self.record_rdm2 not in ("auto", "true", "false"):
            raise ConfigError("record_rdm2 must be auto, true or false")
        if self.with_rdm2 and self.n_sites > 32:
            raise ConfigError("two-body densities are limited to 32 sites")
        parse_initial_state(self.initial_state, self.n_sites)
        if self.triad:
            parse_triad(self.triad, self.n_sites)

    @property
    def params(self) -> SshParams:
        return SshParams(
            t0=self.t0, alpha=self.alpha, k_spring=self.k_spring, mass=self.mass,
            a_lattice=self.a_lattice, hbar=self.hbar, n_sites=self.n_sites,
        )

    @property
    def with_rdm2(self) -> bool:
        return self.record_rdm2 == "true" or (self.record_rdm2 == "auto" and self.n_sites <= 8)

    def physical_dict(self) -> dict:
        return {k: v for k, v in dataclasses.asdict(self).items() if k not in _NON_PHYSICAL}

    def config_hash(self) -> str:
        blob = json.dumps(self.physical_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _coerce(name: str, raw: str):
    types = {f.name: f.type for f in fields(RunConfig)}
    if name not in types:
        raise ConfigError(f"unknown config key {name!r}")
    kind = types[name]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "int | None":
            return None if raw.lower() in ("", "none") else int(raw)
        if kind == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return raw


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Read a flat ``key = value`` file (``#`` comments) and apply overrides."""
    values = {}
    if path is not None:
        text = Path(path).read_text()
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        parser.optionxform = str
        try:
            parser.read_string("[run]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        values.update(parser["run"])
    values.update(overrides or {})
    known = {f.name for f in fields(RunConfig)}
    kwargs = {}
    for key, val in values.items():
        name = key.replace("-", "_")
        if name not in known:
            raise ConfigError(f"unknown config key {key!r}")
        kwargs[name] = _coerce(name, val) if isinstance(val, str) else val
    return RunConfig(**kwargs)


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {'' if v is None else v}\n" for k, v in dataclasses.asdict(cfg).items())


# initial-state syntax


@dataclass(frozen=True)
class InitialStateSpec:
    """Determinants and amplitudes of the initial state, independent of orbitals."""

    determinants: tuple[Determinant, ...]
    amplitudes: np.ndarray

    def build(self, orbitals: np.ndarray) -> SuperpositionState:
        return SuperpositionState(orbitals, self.amplitudes, self.determinants)


_LABEL = re.compile(r"^\(?[012]+\)?$")


def _amplitudes(text: str | None, count: int) -> np.ndarray:
    if text is None:
        return np.full(count, 1 / np.sqrt(count), dtype=complex)
    try:
        b = np.array([complex(x.strip().replace(" ", "")) for x in text.split(",")])
    except ValueError as exc:
        raise ConfigError(f"bad amplitudes {text!r}") from exc
    if len(b) != count:
        raise ConfigError(f"{count} terms but {len(b)} amplitudes")
    norm = np.sum(np.abs(b) ** 2)
    if abs(norm - 1.0) > 1e-3:
        raise ConfigError(f"amplitudes not normalized (sum |b|^2 = {norm:.6f})")
    return b / np.sqrt(norm)


def parse_initial_state(text: str, n_sites: int) -> InitialStateSpec:
    """Parse ``"(2110)+(2101); b=..."`` or ``"HOMO->LUMO, HOMO->LUMO+1; b=..."``.

    In excitation syntax each comma-separated term is ``GS`` (the ground
    configuration) or one or more ``from->to`` moves joined by ``&``, with an
    optional ``:down`` suffix; the default spin channel is up. Amplitudes
    default to equal weights and are renormalized if within 1e-3 of unit norm.
    """
    body, _, tail = text.partition(";")
    amp_text = None
    if tail.strip():
        key, _, val = tail.partition("=")
        if key.strip().lower() != "b":
            raise ConfigError(f"expected 'b=' amplitudes, got {tail.strip()!r}")
        amp_text = val
    body = body.strip()
    if not body:
        raise ConfigError("empty initial state")
    try:
        if "->" in body or body.upper() in ("GS", "GROUND"):
            ground = Determinant.ground(n_sites)
            terms = [t.strip() for t in body.split(",")]
            amps = _amplitudes(amp_text, len(terms))
            excitations = []
            for term in terms:
                if term.upper() in ("GS", "GROUND"):
                    excitations.append(None)
                    continue
                moves = []
                for mv in term.split("&"):
                    mv, _, spin = mv.partition(":")
                    src, _, dst = mv.partition("->")
                    moves.append((level_index(src, n_sites), level_index(dst, n_sites), spin.strip().lower() or "up"))
                excitations.append(moves)
            # sign folding only needs the orbital count
            st = build_excited_state(ground, excitations, amps, np.eye(n_sites))
            return InitialStateSpec(st.determinants, st.amplitudes)
        labels = [t.strip() for t in body.split("+")]
        if not all(_LABEL.match(lb) for lb in labels):
            raise ConfigError(f"cannot parse initial state {text!r}")
        amps = _amplitudes(amp_text, len(labels))
        st = state_from_labels(labels, amps, np.eye(n_sites))
        if any(d.n_electrons != n_sites for d in st.determinants):
            raise ConfigError("initial state must describe a neutral chain")
        return InitialStateSpec(st.determinants, st.amplitudes)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_triad(text: str, n_sites: int) -> tuple[str, ...]:
    labels = tuple(t.strip() for t in text.split(",") if t.strip())
    if len(labels) != 3:
        raise ConfigError("triad needs exactly three occupation labels")
    try:
        for lb in labels:
            if Determinant.from_label(lb, n_sites).n_electrons != n_sites:
                raise ConfigError(f"triad label {lb} is not neutral")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return labels
