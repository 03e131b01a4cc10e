"""Report files: `key = value` lines plus series blocks.

A series block starts with `series <name> <count>` and is followed by
exactly `count` lines holding one value each. Floats are written with
repr so they parse back bit-exactly.
"""

from __future__ import annotations

from pathlib import Path

from .errors import DataError


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report(path: str | Path, values: dict, series: dict[str, list[float]]) -> None:
    lines = ["# gsvit report"]
    for key, value in values.items():
        lines.append(f"{key} = {_fmt(value)}")
    for name, xs in series.items():
        lines.append(f"series {name} {len(xs)}")
        lines.extend(_fmt(x) for x in xs)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_report(path: str | Path) -> tuple[dict[str, str], dict[str, list[float]]]:
    values: dict[str, str] = {}
    series: dict[str, list[float]] = {}
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line or line.startswith("#"):
            continue
        if line.startswith("series "):
            parts = line.split()
            if len(parts) != 3:
                raise DataError(f"{path}: malformed series header '{line}'")
            name, count = parts[1], int(parts[2])
            if i + count > len(lines):
                raise DataError(f"{path}: series '{name}' truncated")
            series[name] = [float(lines[i + j]) for j in range(count)]
            i += count
        elif "=" in line:
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
        else:
            raise DataError(f"{path}: unparseable report line '{line}'")
    return values, series
