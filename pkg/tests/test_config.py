from pathlib import Path

import pytest
from pydantic import ValidationError

from dpm_cvqkd.config import OUT_DIR_ENV, RunConfig, load_run_config, read_config_file, resolve_out_dir
from dpm_cvqkd.finite_size import DEFAULT_BLOCK_SIZES


def test_defaults():
    cfg = RunConfig(command="asymptotic-sweep")
    assert (cfg.v, cfg.beta, cfg.eps, cfg.alpha_db_km) == (20, 0.95, 0.001, 0.2)
    assert cfg.block_sizes == list(DEFAULT_BLOCK_SIZES)
    assert cfg.gain == "auto"
    assert len(cfg.distances()) == 201
    p = cfg.channel_params()
    assert p.modulation_variance == 20
    assert p.total_distance_km == 10


def test_block_sizes_parsing():
    cfg = RunConfig(command="finite-size-sweep", block_sizes="1e4, 1e6,")
    assert cfg.block_sizes == [10**4, 10**6]
    with pytest.raises(ValidationError):
        RunConfig(command="finite-size-sweep", block_sizes="")
    with pytest.raises(ValidationError):
        RunConfig(command="finite-size-sweep", block_sizes=[10, 1])


def test_validation():
    with pytest.raises(ValidationError):
        RunConfig(command="asymptotic-sweep", dmin=3, dmax=2)
    with pytest.raises(ValidationError):
        RunConfig(command="asymptotic-sweep", unknown=1)
    with pytest.raises(ValidationError):
        RunConfig(command="no-such-command")
    with pytest.raises(ValidationError):
        RunConfig(command="simulate", workers=0)


def test_metadata():
    meta = RunConfig(command="tolerable-noise", workers=8).metadata()
    assert "param.v" in meta
    assert "param.eps" not in meta
    assert "param.workers" not in meta
    meta = RunConfig(command="dpm-verify", trials=5).metadata()
    assert meta == {"param.trials": 5, "param.seed": 0, "param.samples": 10**6, "param.inject_error": False}


def test_sim_config():
    sim = RunConfig(command="simulate", distance=20, pulses=500, seed=3, gain="0.4").sim_config()
    assert sim.t1 == sim.t2 == pytest.approx(0.1 ** 0.2)
    assert sim.num_pulses == 500
    assert sim.seed == 3
    assert sim.gain_k == 0.4
    for gain in ("nan", "inf", float("nan")):
        with pytest.raises(ValidationError):
            RunConfig(command="simulate", gain=gain)


def test_read_config_file(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("# short grid\nalpha-db-km=0.25\ndmax=5\n")
    assert read_config_file(path) == {"alpha_db_km": "0.25", "dmax": "5"}
    with pytest.raises(FileNotFoundError):
        read_config_file(tmp_path / "missing.env")


def test_load_run_config_precedence(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("v=30\nbeta=0.9\nself_check=true\n")
    cfg = load_run_config("finite-size-sweep", {"beta": 0.8}, path)
    assert (cfg.v, cfg.beta, cfg.self_check) == (30, 0.8, True)
    assert load_run_config("finite-size-sweep", {}).v == 20


def test_resolve_out_dir(tmp_path, monkeypatch):
    monkeypatch.delenv(OUT_DIR_ENV, raising=False)
    assert resolve_out_dir(RunConfig(command="asymptotic-sweep", out=tmp_path)) == tmp_path
    assert resolve_out_dir(RunConfig(command="asymptotic-sweep")) == Path()
    monkeypatch.setenv(OUT_DIR_ENV, str(tmp_path / "x"))
    assert resolve_out_dir(RunConfig(command="asymptotic-sweep")) == tmp_path / "x"
