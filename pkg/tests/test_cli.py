import math

import pytest

from dpm_cvqkd import cli
from dpm_cvqkd.config import OUT_DIR_ENV
from dpm_cvqkd.report import read_csv_rows, schema_line


def _run(tmp_path, *args: str) -> int:
    return cli.main([*args, "--out", str(tmp_path), "--no-timestamp"])


def _metadata(path) -> dict[str, str]:
    result = {}
    for line in path.read_text().splitlines():
        if line.startswith("# ") and ": " in line:
            key, value = line[2:].split(": ", 1)
            result[key] = value
    return result


def test_asymptotic_sweep_single_point(tmp_path):
    assert _run(tmp_path, "asymptotic-sweep", "--dmin", "0", "--dmax", "0") == cli.EXIT_OK
    path = tmp_path / "asymptotic_sweep.csv"
    assert path.read_text().splitlines()[0] == schema_line("asymptotic-sweep")
    header, rows = read_csv_rows(path)
    assert header[0] == "distance_km"
    assert header[-1] == "key_rate_bits_per_pulse"
    assert len(rows) == 1
    assert float(rows[0][0]) == 0
    assert float(rows[0][-1]) > 0

    meta = _metadata(path)
    assert meta["param.v"] == "20"
    assert meta["param.beta"] == "0.94999999999999996"
    assert "timestamp" not in meta
    assert "param.workers" not in meta


def test_asymptotic_sweep_reproducible(tmp_path):
    args = ("asymptotic-sweep", "--dmax", "12", "--dstep", "0.5")
    assert _run(tmp_path / "a", *args) == cli.EXIT_OK
    assert _run(tmp_path / "b", *args, "--workers", "4") == cli.EXIT_OK
    first = (tmp_path / "a" / "asymptotic_sweep.csv").read_bytes()
    assert first == (tmp_path / "b" / "asymptotic_sweep.csv").read_bytes()
    _, rows = read_csv_rows(tmp_path / "a" / "asymptotic_sweep.csv")
    assert len(rows) == 25


def test_asymptotic_sweep_timestamp(tmp_path):
    assert cli.main(["asymptotic-sweep", "--dmax", "1", "--out", str(tmp_path)]) == cli.EXIT_OK
    assert "timestamp" in _metadata(tmp_path / "asymptotic_sweep.csv")


def test_tolerable_noise(tmp_path):
    assert _run(tmp_path, "tolerable-noise", "--dmax", "40", "--dstep", "5", "--emit-residuals") == cli.EXIT_OK
    header, rows = read_csv_rows(tmp_path / "tolerable_noise.csv")
    assert header == ["distance_km", "tolerable_excess_noise_snu", "residual_abs_key_rate"]
    assert len(rows) == 9
    assert float(rows[0][1]) > 0
    assert float(rows[0][2]) < 1e-9
    assert math.isnan(float(rows[-1][1]))
    assert math.isnan(float(rows[-1][2]))
    assert "param.eps" not in _metadata(tmp_path / "tolerable_noise.csv")


def test_finite_size_sweep(tmp_path):
    args = ("finite-size-sweep", "--dmax", "10", "--dstep", "1", "--block-sizes", "1e5,1e7", "--self-check")
    assert _run(tmp_path, *args) == cli.EXIT_OK
    path = tmp_path / "finite_size_sweep.csv"
    header, rows = read_csv_rows(path)
    assert header == ["block_size_N", "mode", "distance_km", "key_rate_bits_per_pulse"]
    assert len(rows) == 2 * 2 * 11
    assert rows[0][:3] == ["100000", "local", "0"]
    assert {row[1] for row in rows} == {"local", "conventional"}
    assert _metadata(path)["param.block_sizes"] == "[100000, 10000000]"


def test_finite_size_sweep_odd_block_size(tmp_path):
    assert _run(tmp_path, "finite-size-sweep", "--dmax", "4", "--dstep", "1", "--block-sizes", "10001") == cli.EXIT_OK
    _, rows = read_csv_rows(tmp_path / "finite_size_sweep.csv")
    assert len(rows) == 2 * 5
    assert {row[0] for row in rows} == {"10001"}
    assert all(math.isfinite(float(row[3])) for row in rows)


def test_simulate_insufficient_statistics(tmp_path):
    assert _run(tmp_path, "simulate", "--pulses", "10", "--seed", "3") == cli.EXIT_OK
    _, rows = read_csv_rows(tmp_path / "simulate_summary.csv")
    summary = dict(rows)
    assert summary["pulses"] == "10"
    assert summary["insufficient_statistics"] == "true"
    assert summary["gain_mode"] == "auto"
    assert "gamma_empirical.xa_p.xz" in summary
    assert "gamma_analytic.pz.pz" in summary


def test_simulate_deterministic(tmp_path):
    args = ("simulate", "--distance", "4", "--pulses", "20000", "--seed", "5", "--emit-records")
    assert _run(tmp_path / "a", *args) == cli.EXIT_OK
    assert _run(tmp_path / "b", *args, "--workers", "2") == cli.EXIT_OK
    for name in ("simulate_summary.csv", "simulate_records.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    header, rows = read_csv_rows(tmp_path / "a" / "simulate_records.csv")
    assert header == ["xa_p", "pa_p", "xb_p", "pb_p", "xz", "pz", "xa", "pa", "xb", "pb"]
    assert len(rows) == 20000
    meta = _metadata(tmp_path / "a" / "simulate_records.csv")
    assert meta["schema"] == "dpm-cvqkd/simulate-records/v1"
    k = float(meta["gain_k"])
    xa_p, xz, xa = float(rows[0][0]), float(rows[0][4]), float(rows[0][6])
    assert xa == pytest.approx(xa_p - k * xz)


def test_simulate_fixed_gain(tmp_path):
    assert _run(tmp_path, "simulate", "--pulses", "5000", "--gain", "0.25") == cli.EXIT_OK
    summary = dict(read_csv_rows(tmp_path / "simulate_summary.csv")[1])
    assert summary["gain_mode"] == "fixed"
    assert float(summary["gain_k"]) == 0.25


def test_dpm_verify(tmp_path):
    assert _run(tmp_path, "dpm-verify", "--trials", "20", "--samples", "100000") == cli.EXIT_OK
    header, rows = read_csv_rows(tmp_path / "dpm_verify.csv")
    assert header == ["check", "max_deviation", "tolerance", "passed"]
    assert [row[3] for row in rows] == ["true"] * 4


def test_dpm_verify_injected_error(tmp_path):
    code = _run(tmp_path, "dpm-verify", "--trials", "5", "--samples", "100000", "--inject-error")
    assert code == cli.EXIT_SELF_CHECK
    _, rows = read_csv_rows(tmp_path / "dpm_verify.csv")
    assert rows[0][0] == "roundtrip_identity"
    assert rows[0][3] == "false"


def test_usage_errors(tmp_path):
    assert cli.main([]) == cli.EXIT_USAGE
    assert cli.main(["no-such-command"]) == cli.EXIT_USAGE
    assert _run(tmp_path, "asymptotic-sweep", "--pulses", "10") == cli.EXIT_USAGE
    assert _run(tmp_path, "asymptotic-sweep", "--dmin", "5", "--dmax", "1") == cli.EXIT_USAGE
    assert _run(tmp_path, "asymptotic-sweep", "--v", "0.5") == cli.EXIT_USAGE
    assert _run(tmp_path, "simulate", "--gain", "fast") == cli.EXIT_USAGE
    for gain in ("nan", "inf"):
        assert _run(tmp_path, "simulate", "--pulses", "100", "--gain", gain) == cli.EXIT_USAGE
    assert _run(tmp_path, "finite-size-sweep", "--block-sizes", "1") == cli.EXIT_USAGE
    assert _run(tmp_path, "asymptotic-sweep", "--config", str(tmp_path / "missing.env")) == cli.EXIT_USAGE
    assert not list(tmp_path.glob("*.csv"))


def test_config_file_precedence(tmp_path):
    config = tmp_path / "run.env"
    config.write_text("v=30\nbeta=0.9\ndmax=2\ndstep=1\n")
    assert _run(tmp_path, "asymptotic-sweep", "--config", str(config), "--beta", "0.8") == cli.EXIT_OK
    path = tmp_path / "asymptotic_sweep.csv"
    meta = _metadata(path)
    assert meta["param.v"] == "30"
    assert meta["param.beta"] == "0.80000000000000004"
    assert len(read_csv_rows(path)[1]) == 3


def test_out_dir_from_env(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_DIR_ENV, str(tmp_path / "env_out"))
    assert cli.main(["asymptotic-sweep", "--dmax", "0", "--no-timestamp"]) == cli.EXIT_OK
    assert (tmp_path / "env_out" / "asymptotic_sweep.csv").is_file()


def test_dpm_verify_deterministic(tmp_path):
    args = ("dpm-verify", "--trials", "10", "--seed", "7", "--samples", "100000")
    assert _run(tmp_path / "a", *args) == cli.EXIT_OK
    assert _run(tmp_path / "b", *args, "--workers", "3") == cli.EXIT_OK
    assert (tmp_path / "a" / "dpm_verify.csv").read_bytes() == (tmp_path / "b" / "dpm_verify.csv").read_bytes()
