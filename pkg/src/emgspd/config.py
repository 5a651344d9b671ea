"""Flat ``key = value`` run configuration.

Values are typed by the defaults they override; command-line flags beat file
values, which beat defaults. The resolved configuration is written next to
every artifact so a run can be replayed.
"""

from __future__ import annotations

from pathlib import Path

from .exceptions import FormatError, ParameterError

CONFIG_NAME = "run_config.txt"

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key, text, default):
    if isinstance(default, bool):
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ParameterError(f"{key}: expected a boolean, got {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if text.lower() in ("none", ""):
        return None
    return text


def parse_config(path) -> dict:
    """Raw string values from a config file; ``#`` starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}: expected key = value", lineno)
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


class RunConfig(dict):
    """Resolved configuration for one subcommand."""

    @classmethod
    def resolve(cls, defaults: dict, file_values: dict | None = None, flags: dict | None = None):
        cfg = cls(defaults)
        for key, text in (file_values or {}).items():
            if key not in defaults:
                # keys for other subcommands may share one file
                continue
            try:
                cfg[key] = _coerce(key, text, defaults[key])
            except ValueError as exc:
                raise ParameterError(f"config key {key}: {exc}") from None
        for key, value in (flags or {}).items():
            if key in defaults and value is not None:
                cfg[key] = value
        return cfg

    def dumps(self) -> str:
        lines = []
        for key in sorted(self):
            value = self[key]
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {'none' if value is None else value}")
        return "\n".join(lines) + "\n"

    def save(self, directory):
        path = Path(directory) / CONFIG_NAME
        path.write_text(self.dumps(), encoding="utf-8")
        return path
