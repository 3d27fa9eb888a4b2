"""Reader and writer for the flat ``key = value`` text files.

Parameter, gains and scenario files share one syntax: one ``key = value``
pair per line, ``#`` starts a comment, blank lines are ignored.  Scenario
files additionally carry bracketed sections (``[schedule]``) whose lines are
returned verbatim to the caller.
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    """Raised for malformed configuration text; carries the offending line."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(f"{where}{message}")


def strip_comment(text: str) -> str:
    return text.split("#", 1)[0].strip()


def parse_keyvalue(text: str, source: str | None = None) -> tuple[dict[str, str], dict[str, list[tuple[int, str]]]]:
    """Split ``text`` into top-level pairs and named sections.

    Returns ``(pairs, sections)``.  ``sections`` maps a lower-cased section
    name to its non-empty, comment-stripped lines tagged with 1-based line
    numbers, so downstream parsers can report errors precisely.
    """
    pairs: dict[str, str] = {}
    sections: dict[str, list[tuple[int, str]]] = {}
    current: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = strip_comment(raw)
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            if not current:
                raise ConfigError("empty section name", lineno, source)
            sections.setdefault(current, [])
            continue
        if current is not None:
            sections[current].append((lineno, line))
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, source)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("missing key", lineno, source)
        if key in pairs:
            raise ConfigError(f"duplicate key {key!r}", lineno, source)
        pairs[key] = value
    return pairs, sections


def read_keyvalue(path: str | Path) -> tuple[dict[str, str], dict[str, list[tuple[int, str]]]]:
    path = Path(path)
    return parse_keyvalue(path.read_text(encoding="utf-8"), source=str(path))


def to_float(pairs: dict[str, str], key: str, source: str | None = None) -> float:
    try:
        return float(pairs[key])
    except KeyError:
        raise ConfigError(f"missing key {key!r}", path=source) from None
    except ValueError:
        raise ConfigError(f"key {key!r}: not a number: {pairs[key]!r}", path=source) from None


def format_float(value: float) -> str:
    """Shortest text that round-trips through ``float``."""
    return repr(float(value))


def dump_keyvalue(pairs: dict[str, object], header: str | None = None) -> str:
    lines = []
    if header:
        lines.extend(f"# {h}" if h else "#" for h in header.splitlines())
    width = max((len(k) for k in pairs), default=0)
    for key, value in pairs.items():
        text = format_float(value) if isinstance(value, float) else str(value)
        lines.append(f"{key:<{width}} = {text}")
    return "\n".join(lines) + "\n"
