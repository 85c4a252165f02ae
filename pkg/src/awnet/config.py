"""Flat ``key=value`` config text: one pair per line, ``#`` comments, comma lists."""

from __future__ import annotations

from pathlib import Path


def _parse_scalar(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    return text


def parse_value(text: str):
    text = text.strip()
    if "," in text:
        return tuple(_parse_scalar(part.strip()) for part in text.split(",") if part.strip())
    return _parse_scalar(text)


def parse_config(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ValueError(f"config line {lineno}: empty key")
        if key in out:
            raise ValueError(f"config line {lineno}: duplicate key {key!r}")
        out[key] = parse_value(value)
    return out


def _format_value(value) -> str:
    if isinstance(value, (list, tuple)):
        # trailing comma keeps one-element lists lists
        items = ",".join(_format_value(v) for v in value)
        return items + "," if len(value) == 1 else items
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(values: dict) -> str:
    return "".join(f"{key}={_format_value(values[key])}\n" for key in sorted(values))


def read_config(path) -> dict:
    return parse_config(Path(path).read_text(encoding="utf-8"))
