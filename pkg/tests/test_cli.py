import numpy as np
import pytest

from ssh_ehrenfest import cli
from ssh_ehrenfest.config import ConfigError, load_config, parse_initial_state, parse_triad
from ssh_ehrenfest.dynamics import IntegratorConfig, Trajectory, TrajectoryBatch, run_trajectory
from ssh_ehrenfest.ensemble import (
    EXIT_CONFIG,
    EXIT_MONITOR,
    EXIT_OK,
    EXIT_PARTIAL,
    SCHEMA_VERSION,
    initial_conditions,
    load_ensemble,
    prepare,
    read_csv,
    run_ensemble,
)

SMALL = {"n_traj": "6", "seed": "3", "dt": "0.05", "t_max": "20", "record_stride": "40", "chunk_size": "4"}


def small_cfg(**extra):
    return load_config(None, {**SMALL, **{k: str(v) for k, v in extra.items()}})


def _read_all(d):
    return {name: (d / name).read_text() for name in ("populations.csv", "states.csv", "purity.csv")}


def test_config_file_and_overrides(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("n_sites = 6  # chain length\nseed = 11\ndt = 0.02\ntriad =\n")
    cfg = load_config(f, {"dt": "0.03"})
    assert cfg.n_sites == 6 and cfg.seed == 11 and cfg.dt == 0.03 and cfg.triad == ""
    assert load_config(None).params.t0 == 2.5


@pytest.mark.parametrize(
    "overrides",
    [{"bogus": "1"}, {"n_traj": "0"}, {"dt": "abc"}, {"n_sites": "5"}, {"record_rdm2": "maybe"},
     {"initial_state": "(2110)+(2101); b=1,1"}, {"initial_state": "(3100)"}, {"triad": "(2110),(2101)"},
     {"initial_state": "HOMO->LUMO+7"}],
)
def test_config_errors(overrides):
    with pytest.raises(ConfigError):
        load_config(None, overrides)


def test_initial_state_syntaxes():
    a = parse_initial_state("HOMO->LUMO, HOMO->LUMO+1", 4)
    b = parse_initial_state("(2110)+(2101); b=0.70710678,0.70710678", 4)
    assert a.determinants == b.determinants
    assert np.allclose(np.abs(a.amplitudes), np.abs(b.amplitudes))
    c = parse_initial_state("GS, HOMO->LUMO & HOMO->LUMO:down; b=0.6,0.8", 4)
    assert len(c.determinants) == 2 and c.determinants[1].n_electrons == 4
    assert parse_triad("(2110),(2101),(1210)", 20) == ("(2110)", "(2101)", "(1210)")


def test_cli_config_error_exit_code(tmp_path):
    assert cli.main(["run", "--set", "bogus=1", "-o", str(tmp_path / "x")]) == EXIT_CONFIG
    # ensemble runs need an explicit seed
    assert cli.main(["run", "--n-traj", "2", "-o", str(tmp_path / "y")]) == EXIT_CONFIG


def test_optimize_modes_spectrum(tmp_path, capsys):
    assert cli.main(["optimize", "-o", str(tmp_path / "g.csv")]) == EXIT_OK
    head, cols = read_csv(tmp_path / "g.csv")
    assert float(head["bo_energy_eV"]) == pytest.approx(-11.495831, abs=1e-5)
    assert np.allclose(cols["u_angstrom"], [0, -0.08474857, 0.08474857, 0], atol=1e-7)
    assert cli.main(["modes", "-o", str(tmp_path / "m.csv")]) == EXIT_OK
    _, m = read_csv(tmp_path / "m.csv")
    assert np.allclose(m["omega_rad_per_fs"], [0.12476, 0.18316], atol=1e-4)
    assert cli.main(["spectrum", "--many-body"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "# occupation_classes: 19" in out and "(2200)" in out
    assert cli.main(["spectrum", "--many-body", "--n-sites", "40"]) == EXIT_CONFIG


def test_same_seed_same_outputs(tmp_path):
    run_ensemble(small_cfg(), tmp_path / "a")
    run_ensemble(small_cfg(), tmp_path / "b")
    assert _read_all(tmp_path / "a") == _read_all(tmp_path / "b")
    run_ensemble(small_cfg(seed=4), tmp_path / "c")
    assert _read_all(tmp_path / "a")["populations.csv"] != _read_all(tmp_path / "c")["populations.csv"]


def test_worker_count_does_not_change_results(tmp_path):
    run_ensemble(small_cfg(workers=1), tmp_path / "w1")
    run_ensemble(small_cfg(workers=2), tmp_path / "w2")
    assert _read_all(tmp_path / "w1") == _read_all(tmp_path / "w2")


def test_csv_headers(tmp_path):
    cfg = small_cfg()
    run_ensemble(cfg, tmp_path)
    for name, schema in (("populations.csv", "populations"), ("states.csv", "states"), ("purity.csv", "purity")):
        head, cols = read_csv(tmp_path / name)
        assert head["schema"] == f"{schema}/{SCHEMA_VERSION}"
        assert head["config_hash"] == cfg.config_hash() and head["n_traj"] == "6"
        assert "code_version" in head
        assert np.allclose(cols["time_fs"], [0, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20])
    _, pops = read_csv(tmp_path / "populations.csv")
    assert np.allclose(sum(pops[f"n_{i}"] for i in range(1, 5)), 4)
    _, pur = read_csv(tmp_path / "purity.csv")
    assert list(pur)[2:] == ["P1", "P2", "M1_P1", "M1_P2", "M2_P1", "M2_P2", "M3_P1", "M3_P2"]


def test_single_member_matches_run_trajectory(tmp_path):
    cfg = small_cfg(n_traj=1)
    mean, _ = run_ensemble(cfg, write=False)
    setup = prepare(cfg)
    (ph,), (st,) = initial_conditions(setup, [0])
    rec = run_trajectory(Trajectory(ph, st, cfg.params), IntegratorConfig(cfg.dt, cfg.t_max, cfg.record_stride), ("rdm1", "populations"))
    assert np.allclose(mean.rdm1, rec["rdm1"], atol=1e-13)
    assert np.allclose(mean.populations, rec["populations"], atol=1e-13)


def test_resume_from_chunk_checkpoint(tmp_path):
    cfg = small_cfg()
    run_ensemble(cfg, tmp_path / "ref")
    out = tmp_path / "resumed"
    run_ensemble(cfg, out)
    # drop the final outputs and one chunk; the other chunk is restored
    for f in ("populations.csv", "states.csv", "purity.csv", "ensemble.npz"):
        (out / f).unlink()
    (out / "checkpoints" / "chunk_00001.npz").unlink()
    run_ensemble(cfg, out)
    assert _read_all(tmp_path / "ref") == _read_all(out)


def test_resume_from_partial_checkpoint(tmp_path, monkeypatch):
    cfg = small_cfg(checkpoint_interval=4, n_traj=3)
    run_ensemble(cfg, tmp_path / "ref")
    real = TrajectoryBatch.advance
    calls = {"n": 0}

    def flaky(self, *a, **k):
        calls["n"] += 1
        if calls["n"] == 6:
            raise KeyboardInterrupt
        return real(self, *a, **k)

    monkeypatch.setattr(TrajectoryBatch, "advance", flaky)
    with pytest.raises(KeyboardInterrupt):
        run_ensemble(cfg, tmp_path / "cut")
    assert (tmp_path / "cut" / "checkpoints" / "chunk_00000.partial.npz").exists()
    monkeypatch.setattr(TrajectoryBatch, "advance", real)
    run_ensemble(cfg, tmp_path / "cut")
    assert _read_all(tmp_path / "ref") == _read_all(tmp_path / "cut")
    assert not (tmp_path / "cut" / "checkpoints" / "chunk_00000.partial.npz").exists()


def test_stale_checkpoint_is_ignored(tmp_path):
    run_ensemble(small_cfg(), tmp_path)
    mean, _ = run_ensemble(small_cfg(dt=0.04), tmp_path)
    ref, _ = run_ensemble(small_cfg(dt=0.04), write=False)
    assert np.array_equal(mean.rdm1, ref.rdm1)


def _fail_members(monkeypatch, members):
    real = TrajectoryBatch.check_monitors

    def fake(self, cfg):
        bad = real(self, cfg)
        for m in members:
            if m < self.n_traj and self.alive[m]:
                bad[m] = True
                self.alive[m] = False
        return bad

    monkeypatch.setattr(TrajectoryBatch, "check_monitors", fake)


def test_partial_failure_exit_code(tmp_path, monkeypatch):
    _fail_members(monkeypatch, [1])
    code = cli.main(["run", "--n-traj", "6", "--seed", "3", "--dt", "0.05", "--t-max", "10", "--record-stride", "40", "--chunk-size", "4", "-o", str(tmp_path)])
    assert code == EXIT_PARTIAL
    _, mean = load_ensemble(tmp_path / "ensemble.npz")
    assert mean.n_traj == 4 and mean.failed == [1, 5]
    # survivors are unaffected by the masked members
    monkeypatch.undo()
    cfg = small_cfg(t_max=10)
    setup = prepare(cfg)
    ph, st = initial_conditions(setup, [0, 2, 3, 4])
    b = TrajectoryBatch.from_states(cfg.params, ph, st)
    b.advance(200, 0.05)
    assert np.allclose(mean.rdm1[-1], b.rdm1().mean(axis=0), atol=1e-12)


def test_total_failure_exit_code(tmp_path, monkeypatch):
    _fail_members(monkeypatch, range(64))
    assert cli.main(["run", "--n-traj", "3", "--seed", "1", "--t-max", "2", "--dt", "0.05", "--record-stride", "20", "-o", str(tmp_path)]) == EXIT_MONITOR


def test_energy_monitor_trips_for_huge_step(tmp_path):
    code = cli.main(["run", "--n-traj", "2", "--seed", "1", "--dt", "2.0", "--t-max", "400", "--record-stride", "5",
                     "--set", "energy_tol=1e-9", "-o", str(tmp_path)])
    assert code == EXIT_MONITOR


def test_analyze_subcommand(tmp_path):
    run_ensemble(small_cfg(), tmp_path / "r")
    assert cli.main(["analyze", str(tmp_path / "r"), "--triad", "(2110),(1210),(2101)", "-o", str(tmp_path / "a")]) == EXIT_OK
    _, s_old = read_csv(tmp_path / "r" / "states.csv")
    _, s_new = read_csv(tmp_path / "a" / "states.csv")
    assert np.allclose(s_old["p1"], s_new["p2"]) and np.allclose(s_old["p2"], s_new["p1"])
    assert (tmp_path / "r" / "purity.csv").read_text() != ""


def test_verify_subcommand(capsys):
    assert cli.main(["verify", "--n-random", "10"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("PASS") == 6 and "FAIL" not in out
