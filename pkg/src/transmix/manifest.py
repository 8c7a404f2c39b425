"""Experiment manifests: flat key = value text files.

A manifest plus the code version fully determines an experiment's outputs,
so manifests are kept deliberately dumb: one key per line, string values,
`#` comments.  Dotted keys group related settings (gen.*, transform.*,
motion.*, init.*, options.*) without any nesting in the format itself.
"""

from __future__ import annotations

from pathlib import Path


class Manifest:
    """Ordered key-value settings with typed access."""

    def __init__(self, entries: dict[str, str] | None = None):
        self.entries: dict[str, str] = dict(entries or {})

    @classmethod
    def parse(cls, text: str) -> "Manifest":
        entries = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"manifest line {lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            entries[key.strip()] = value.strip()
        return cls(entries)

    @classmethod
    def load(cls, path) -> "Manifest":
        return cls.parse(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.format())

    def format(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.entries.items())

    def override(self, pairs: dict[str, str]) -> "Manifest":
        merged = dict(self.entries)
        merged.update(pairs)
        return Manifest(merged)

    def get(self, key: str, default: str | None = None) -> str:
        if key in self.entries:
            return self.entries[key]
        if default is None:
            raise KeyError(f"manifest is missing required key {key!r}")
        return default

    def get_int(self, key: str, default: int | None = None) -> int:
        return int(self.get(key, None if default is None else str(default)))

    def get_float(self, key: str, default: float | None = None) -> float:
        return float(self.get(key, None if default is None else str(default)))

    def get_bool(self, key: str, default: bool | None = None) -> bool:
        raw = self.get(key, None if default is None else str(default)).lower()
        if raw in ("1", "true", "yes", "on"):
            return True
        if raw in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"manifest key {key!r}: not a boolean: {raw!r}")

    def __contains__(self, key: str) -> bool:
        return key in self.entries
