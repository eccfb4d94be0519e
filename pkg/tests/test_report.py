import math

from dpm_cvqkd.report import CONVENTIONS, package_version, read_csv_rows, schema_line, write_csv


def test_schema_line():
    assert schema_line("simulate") == "# schema: dpm-cvqkd/simulate/v1"


def test_write_csv(tmp_path):
    path = tmp_path / "nested" / "out.csv"
    rows = [(0.0, 1.5), (1.0, math.nan)]
    write_csv(path, "asymptotic-sweep", {"param.v": 20.0}, ["distance_km", "key_rate"], rows, timestamp=False)
    lines = path.read_text().splitlines()
    assert lines[0] == "# schema: dpm-cvqkd/asymptotic-sweep/v1"
    assert lines[1] == f"# version: {package_version()}"
    assert lines[2] == "# param.v: 20"
    assert len([line for line in lines if line.startswith("# convention.")]) == len(CONVENTIONS)
    assert not any(line.startswith("# timestamp:") for line in lines)
    assert lines[-3:] == ["distance_km,key_rate", "0,1.5", "1,nan"]

    header, rows = read_csv_rows(path)
    assert header == ["distance_km", "key_rate"]
    assert rows == [["0", "1.5"], ["1", "nan"]]


def test_write_csv_timestamp(tmp_path):
    path = write_csv(tmp_path / "out.csv", "dpm-verify", {}, ["check"], [("a",)])
    assert any(line.startswith("# timestamp:") for line in path.read_text().splitlines())
