"""Flat key=value run configuration with section prefixes.

Example file:

    # desk-scale run
    synth.n_patients=300
    train.lr=2e-4
    split.seed=11

Flags override file values; every stage echoes its fully resolved
configuration (plus the tool version) next to its outputs.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

from . import __version__
from .errors import ConfigError


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config_file(path: Optional[Path]) -> dict[str, str]:
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text())


class RunConfig:
    """Merged view of config file and CLI flags (flags win)."""

    def __init__(self, file_values: dict[str, str]):
        self.file_values = dict(file_values)
        self.resolved: dict[str, str] = {}

    def resolve(self, key: str, flag_value, default, cast):
        """flag > file > default; string values go through the cast."""
        if flag_value is not None:
            value = flag_value
        elif key in self.file_values:
            value = self.file_values[key]
        else:
            value = default
        if isinstance(value, str) and cast is not str:
            try:
                value = cast(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"config key {key}: {exc}") from exc
        self.resolved[key] = str(value)
        return value

    def write_resolved(self, out_dir: Path, stage: str) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        lines = [f"tool.version={__version__}", f"tool.stage={stage}"]
        lines += [f"{k}={v}" for k, v in sorted(self.resolved.items())]
        (out_dir / "config_resolved.txt").write_text("\n".join(lines) + "\n")
