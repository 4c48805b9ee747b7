"""Line-oriented ``key = value`` text used for manifests, parameter overrides
and evaluation reports. ``#`` starts a comment; blank lines are ignored."""


class KVSyntaxError(ValueError):
    pass


def parse_kv(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise KVSyntaxError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if key in out:
            raise KVSyntaxError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return " ".join(format_value(v) for v in value)
    return str(value)


def format_kv(items) -> str:
    """Render ``(key, value)`` pairs (or a dict) in the given order."""
    if isinstance(items, dict):
        items = items.items()
    lines = []
    for key, value in items:
        if "=" in key or "\n" in key:
            raise ValueError(f"invalid key {key!r}")
        lines.append(f"{key} = {format_value(value)}")
    return "".join(line + "\n" for line in lines)
