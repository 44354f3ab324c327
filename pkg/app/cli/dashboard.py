"""CLI dashboard — prints run summaries to the console."""

from __future__ import annotations

from typing import Any, Mapping

_WIDTH = 50


def _format(value: Any) -> str:
    if value is None:
        return "N/A"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.4f}"
    if isinstance(value, (list, tuple)):
        return ", ".join(_format(v) for v in value)
    return str(value)


def print_summary(title: str, rows: Mapping[str, Any]) -> str:
    """Format and print a boxed key/value summary.

    Returns:
        The formatted string (also printed to stdout).
    """
    label = f" {title} "
    side = max((_WIDTH - len(label)) // 2, 2)
    header = "─" * side + label + "─" * max(_WIDTH - side - len(label), 2)
    key_width = max((len(k) for k in rows), default=0) + 1

    lines = [header]
    lines.extend(f"  {(key + ':').ljust(key_width + 1)} {_format(value)}" for key, value in rows.items())
    lines.append("─" * len(header))
    output = "\n".join(lines)
    print(output)
    return output


def print_table(title: str, header: list[str], rows: list[list[Any]]) -> str:
    """Boxed fixed-width table (used by ``compare``)."""
    cells = [[_format(c) for c in row] for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h) for i, h in enumerate(header)]
    fmt = "  " + "  ".join(f"{{:<{w}}}" for w in widths)
    body = [fmt.format(*header)] + [fmt.format(*r) for r in cells]
    width = max(_WIDTH, max(len(b) for b in body) + 2)
    label = f" {title} "
    side = max((width - len(label)) // 2, 2)
    top = "─" * side + label + "─" * max(width - side - len(label), 2)
    output = "\n".join([top, *body, "─" * len(top)])
    print(output)
    return output
