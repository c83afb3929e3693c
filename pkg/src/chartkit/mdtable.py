"""Markdown table parsing into positional cell grids.

The parser is deliberately forgiving about the prose around a table (model
outputs often wrap tables in commentary or code fences) but strict about the
table shape itself: a header row immediately followed by a separator row.
"""

from __future__ import annotations

import re

_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\n(.*?)```", re.DOTALL)
_SEPARATOR_CELL_RE = re.compile(r"^:?-+:?$")


def _split_row(line: str) -> list[str]:
    """Split one pipe-delimited row into stripped cells.

    Outer pipes are optional; ``\\|`` escapes a literal pipe inside a cell.
    """
    cells: list[str] = []
    buf: list[str] = []
    escaped = False
    for ch in line:
        if escaped:
            buf.append(ch)
            escaped = False
        elif ch == "\\":
            escaped = True
        elif ch == "|":
            cells.append("".join(buf).strip())
            buf = []
        else:
            buf.append(ch)
    cells.append("".join(buf).strip())
    # outer pipes produce empty first/last segments; drop them
    if cells and cells[0] == "":
        cells = cells[1:]
    if cells and cells[-1] == "":
        cells = cells[:-1]
    return cells


def _is_separator_row(cells: list[str]) -> bool:
    return bool(cells) and all(_SEPARATOR_CELL_RE.match(c.replace(" ", "")) for c in cells)


def parse_table(text: str) -> list[list[str]] | None:
    """Parse the first markdown table in ``text`` to a grid of cell strings.

    The grid is the header row followed by the body rows; the separator row
    is structural and not part of the grid. Returns None when no table is
    found.
    """
    fenced = _FENCE_RE.search(text)
    if fenced:
        text = fenced.group(1)
    lines = text.splitlines()
    for i in range(len(lines) - 1):
        if "|" not in lines[i] or "|" not in lines[i + 1]:
            continue
        header = _split_row(lines[i])
        sep = _split_row(lines[i + 1])
        if not header or not _is_separator_row(sep):
            continue
        grid = [header]
        for line in lines[i + 2 :]:
            if "|" not in line:
                break
            row = _split_row(line)
            if not row:
                break
            grid.append(row)
        return grid
    return None


def cell_count(grid: list[list[str]]) -> int:
    return sum(len(row) for row in grid)
