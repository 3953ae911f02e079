"""Line-based sectioned text format used for scenarios, configs and exports.

A file is a sequence of ``[section]`` headers.  Inside a section each
non-blank line is either a ``key = value`` pair or a bare data row
(whitespace-separated numbers).  ``#`` starts a comment anywhere on a line.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError


@dataclass
class Section:
    name: str
    line: int
    values: dict[str, str] = field(default_factory=dict)
    rows: list[list[float]] = field(default_factory=list)

    def get(self, key: str, default: str | None = None) -> str | None:
        return self.values.get(key, default)

    def require(self, key: str) -> str:
        if key not in self.values:
            raise ConfigError(f"section [{self.name}] (line {self.line}) is missing key '{key}'")
        return self.values[key]

    def floats(self, key: str) -> list[float]:
        raw = self.require(key)
        try:
            return [float(tok) for tok in raw.split()]
        except ValueError as exc:
            raise ConfigError(f"key '{key}' in [{self.name}]: cannot parse '{raw}' as numbers") from exc


def parse_sections(text: str) -> list[Section]:
    """Parse sectioned text into an ordered list of Section objects."""
    sections: list[Section] = []
    current: Section | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: malformed section header '{raw.strip()}'")
            current = Section(name=line[1:-1].strip(), line=lineno)
            sections.append(current)
            continue
        if current is None:
            raise ConfigError(f"line {lineno}: data before any [section] header")
        if "=" in line:
            key, _, value = line.partition("=")
            current.values[key.strip()] = value.strip()
        else:
            try:
                current.rows.append([float(tok) for tok in line.split()])
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: cannot parse data row '{line}'") from exc
    return sections


def format_section(name: str, values: dict | None = None, rows: list | None = None) -> str:
    out = [f"[{name}]"]
    for key, val in (values or {}).items():
        out.append(f"{key} = {val}")
    for row in rows or []:
        out.append(" ".join(f"{v:.6f}" if isinstance(v, float) else str(v) for v in row))
    out.append("")
    return "\n".join(out)
