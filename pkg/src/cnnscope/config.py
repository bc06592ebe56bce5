"""Flat TOML-style config files: [section] headers and key = value pairs.

Supported values: integers, floats, booleans (true/false), quoted strings,
and flat [a, b, c] lists of those. Comments start with '#'. Dotted section
names like [model.stage1] stay flat keys of the top-level mapping.
"""

from __future__ import annotations

from .errors import DataFormatError


def parse_config(text: str) -> dict:
    sections: dict = {}
    current = sections.setdefault("", {})
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if not name:
                raise DataFormatError(f"line {lineno}: empty section name")
            current = sections.setdefault(name, {})
            continue
        if "=" not in line:
            raise DataFormatError(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise DataFormatError(f"line {lineno}: empty key")
        current[key] = _parse_value(value.strip(), lineno)
    return sections


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())


def _strip_comment(line: str) -> str:
    out = []
    in_str = False
    for ch in line:
        if ch == '"':
            in_str = not in_str
        if ch == "#" and not in_str:
            break
        out.append(ch)
    return "".join(out)


def _parse_value(s: str, lineno: int):
    if not s:
        raise DataFormatError(f"line {lineno}: empty value")
    if s.startswith("[") and s.endswith("]"):
        inner = s[1:-1].strip()
        if not inner:
            return []
        return [_parse_value(part.strip(), lineno) for part in inner.split(",")]
    if s == "true":
        return True
    if s == "false":
        return False
    if s.startswith('"') and s.endswith('"') and len(s) >= 2:
        return s[1:-1]
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        raise DataFormatError(f"line {lineno}: cannot parse value {s!r}") from None


def dump_config(sections: dict) -> str:
    """Inverse of parse_config, used to echo effective configs into manifests."""
    lines = []
    for name in sections:
        body = sections[name]
        if not body:
            continue
        if name:
            lines.append(f"[{name}]")
        for key, value in body.items():
            lines.append(f"{key} = {_format_value(value)}")
        lines.append("")
    return "\n".join(lines)


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_format_value(x) for x in v) + "]"
    return '"' + str(v) + '"'
