"""Number formatting for human-readable reports (DOT labels, leaf tables)."""

from __future__ import annotations

import dataclasses
import math
import textwrap
from typing import Dict, Iterable, Sequence, Union

import numpy as np
import pandas as pd

__all__ = [
    "MultiFormatSpec",
    "format_table",
    "format_value",
    "set_global_format_spec",
]


@dataclasses.dataclass
class MultiFormatSpec:
    """Per-type format specifiers, e.g. ``{float: '.4f', int: 'd'}``.

    Lookup is by exact type first, then by the first registered superclass;
    numpy scalars resolve as the Python type they convert to.
    """

    _spec: Dict[type, str] = dataclasses.field(default_factory=dict)

    def copy(self) -> MultiFormatSpec:
        return type(self)(dict(self._spec))

    def update(self, other: SpecLike) -> MultiFormatSpec:
        self._spec.update(other._spec if isinstance(other, MultiFormatSpec) else other)
        return self

    def __or__(self, other: SpecLike) -> MultiFormatSpec:
        return self.copy().update(other)

    def get_format(self, obj: object) -> str:
        if isinstance(obj, np.generic):
            obj = obj.item()
        fmt = self._spec.get(type(obj))
        if fmt is not None:
            return fmt
        return next((f for cls, f in self._spec.items() if isinstance(obj, cls)), "")

    def register_format(self, cls: type, fmt: str):
        if not isinstance(cls, type):
            raise TypeError(f"cls must be a type, not {cls!r}")
        self._spec[cls] = fmt

    def format(self, obj: object) -> str:
        """Format one value; None and NaN (missing estimates) render as ``'-'``."""
        if obj is None:
            return "-"
        if isinstance(obj, np.generic):
            obj = obj.item()
        if isinstance(obj, float) and math.isnan(obj):
            return "-"
        return format(obj, self.get_format(obj))


SpecLike = Union[Dict[type, str], MultiFormatSpec]

_GLOBAL_FORMAT_SPEC = MultiFormatSpec({bool: "", int: "d", float: ".4f", str: ""})


def set_global_format_spec(formats: SpecLike) -> MultiFormatSpec:
    """Change the report-wide specifiers; returns the previous ones.

    Example
    -------
    >>> format_value(1.23456)
    '1.2346'
    >>> old = set_global_format_spec({float: '.2f'})
    >>> format_value(1.23456)
    '1.23'
    >>> _ = set_global_format_spec(old)
    """
    old = _GLOBAL_FORMAT_SPEC.copy()
    _GLOBAL_FORMAT_SPEC.update(formats)
    return old


def resolve_format_spec(formats: SpecLike = None) -> MultiFormatSpec:
    """Global specifiers, overridden by `formats` when given."""
    if formats is None:
        return _GLOBAL_FORMAT_SPEC.copy()
    return _GLOBAL_FORMAT_SPEC | formats


def format_value(obj: object, formats: SpecLike = None) -> str:
    """Format an object with the global specifiers (optionally overridden)."""
    return resolve_format_spec(formats).format(obj)


def format_table(
    headers: Sequence[str],
    rows: Iterable[Sequence[object]],
    formats: SpecLike = None,
) -> str:
    """Render rows as a plain-text, column-aligned table.

    Example
    -------
    >>> print(format_table(['leaf', 'value'], [['d1', 1.5], ['d2', 2.25]]))
    leaf value
    ---- ------
    d1   1.5000
    d2   2.2500
    """
    spec = resolve_format_spec(formats)
    cells = [[spec.format(v) for v in row] for row in rows]
    for row in cells:
        if len(row) != len(headers):
            raise ValueError(
                f"row has {len(row)} cells but the table has {len(headers)} columns"
            )
    widths = [max([len(h), *(len(row[j]) for row in cells)]) for j, h in enumerate(headers)]
    body = [["-" * w for w in widths], *cells]
    frame = pd.DataFrame(
        [[c.ljust(w) for c, w in zip(row, widths)] for row in body],
        columns=range(len(headers)),
    )
    text = frame.to_string(
        index=False, header=[h.ljust(w) for h, w in zip(headers, widths)]
    )
    return "\n".join(line.rstrip() for line in textwrap.dedent(text).splitlines())
