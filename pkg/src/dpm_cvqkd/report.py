"""Self-describing CSV output: a schema line, '#' metadata lines, then a header row and data rows."""

import csv
import logging
from collections.abc import Iterable, Mapping, Sequence
from datetime import UTC, datetime
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

from dpm_cvqkd.utils import format_value

logger = logging.getLogger(__name__)

SCHEMA_PREFIX = "dpm-cvqkd"
SCHEMA_VERSION = "v1"

CONVENTIONS: dict[str, str] = {
    "units": "shot-noise units, vacuum quadrature variance 1",
    "fiber_model": "T = 10^(-alpha*L_arm/10) per arm, L_arm = L/2, L = Alice-to-Bob distance",
    "excess_noise": "referred to the channel input",
    "reconciliation": "direct, heterodyne conditioning on A",
    "bsm": "x_Z = (x_A3 - x_B3)/sqrt(2), p_Z = (p_A3 + p_B3)/sqrt(2)",
    "displacement": "x_A = x_A' - k x_Z, p_A = p_A' - k p_Z, x_B = x_B' + k x_Z, p_B = p_B' - k p_Z",
}


def package_version() -> str:
    try:
        return version("dpm-cvqkd")
    except PackageNotFoundError:
        return "0+unknown"


def schema_line(command: str) -> str:
    return f"# schema: {SCHEMA_PREFIX}/{command}/{SCHEMA_VERSION}"


def write_csv(
    path: Path,
    command: str,
    metadata: Mapping[str, object],
    header: Sequence[str],
    rows: Iterable[Sequence[object]],
    timestamp: bool = True,
) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        f.write(schema_line(command) + "\n")
        f.write(f"# version: {package_version()}\n")
        for key, value in metadata.items():
            f.write(f"# {key}: {format_value(value)}\n")
        for key, value in CONVENTIONS.items():
            f.write(f"# convention.{key}: {value}\n")
        if timestamp:
            f.write(f"# timestamp: {datetime.now(UTC).isoformat(timespec='seconds')}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        count = 0
        for row in rows:
            writer.writerow([format_value(value) for value in row])
            count += 1
    logger.info("wrote %d rows to %s", count, path)
    return path


def read_csv_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    """Header and data rows, skipping '#' metadata lines."""
    with path.open(encoding="utf-8") as f:
        lines = [line for line in f if not line.startswith("#")]
    parsed = list(csv.reader(lines))
    return parsed[0], parsed[1:]
