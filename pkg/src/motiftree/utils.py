import dataclasses
import numbers
import os
from typing import Generic, Mapping, Optional, TypeVar, Union

import numpy as np

StrPath = Union[str, os.PathLike[str]]
SeedLike = Union[int, np.random.SeedSequence, None]


def coerce_numeric(obj, to_type: type):
    """Gently attempt to coerce `obj` to the numeric type `to_type`.

    Used when reading loosely-typed configuration (TOML, environment variables,
    command-line strings) into the numeric fields of config dataclasses. Values
    that cannot be converted exactly are returned unchanged, so the dataclass
    validation that follows reports them.

    Example
    -------
    >>> coerce_numeric('20', int), coerce_numeric('0.5', float), coerce_numeric(0.5, int)
    (20, 0.5, 0.5)
    """
    if hasattr(to_type, "__args__") or not issubclass(to_type, numbers.Number):
        return obj
    if isinstance(obj, str):
        try:
            obj = float(obj) if any(c in obj for c in ".eE") else int(obj)
        except ValueError:
            return obj
    if not isinstance(obj, numbers.Number):
        return obj
    # 0.5 must not silently become 0
    if issubclass(to_type, numbers.Integral) and obj != int(obj):
        return obj
    try:
        return to_type(obj)
    except (TypeError, ValueError, OverflowError):
        return obj


def substream(seed: SeedLike, *key: int) -> np.random.Generator:
    """Return a generator for the counter-derived substream `key` of `seed`.

    Substreams are reproducible in isolation: ``substream(s, 3)`` yields the same
    draws whether or not substreams 0-2 were ever used, which is what lets
    replicates and per-axis subsampling run in any order or in parallel.

    Example
    -------
    >>> a = substream(42, 7).random()
    >>> b = substream(42, 7).random()
    >>> a == b
    True
    """
    if isinstance(seed, np.random.SeedSequence):
        entropy = seed.entropy
        prefix = tuple(seed.spawn_key)
    else:
        entropy = seed
        prefix = ()
    return np.random.default_rng(
        np.random.SeedSequence(entropy, spawn_key=prefix + tuple(int(k) for k in key))
    )


def resolve_threads(threads: Optional[int]) -> int:
    """Number of worker threads to use; None reads the `threads` setting."""
    if threads is None:
        from .config import settings

        threads = settings.get_int("threads")
    return max(1, int(threads))


KT = TypeVar("KT")
VT = TypeVar("VT")


@dataclasses.dataclass
class ValueTypeDispatch(Generic[KT, VT]):
    """Dispatch helper that raises TypeError.

    Parameters
    ----------
    name : str
        Name of the value type. Used in the error message.
    dispatch : mapping
        Mapping of dispatch keys to values.

    Example
    -------
    >>> mode_dispatch = ValueTypeDispatch('mode',
    ...                                   {'potential-outcomes': False,
    ...                                    'direct-effects': True})
    >>> mode_dispatch['direct-effects']
    True
    >>> mode_dispatch['not_a_mode']
    <Traceback>
    TypeError: Invalid mode 'not_a_mode'; must be one of ['potential-outcomes', 'direct-effects']
    """

    name: str
    dispatch: Mapping[KT, VT]

    def __getitem__(self, key: KT) -> VT:
        try:
            value = self.dispatch[key]
        except KeyError as exc:
            valid = list(self.dispatch)
            raise TypeError(
                f"Invalid {self.name} {key!r}; must be one of {valid!r}"
            ) from exc
        return value

    def __contains__(self, key) -> bool:
        return key in self.dispatch

    def keys(self):
        return self.dispatch.keys()
