import os
import sys
import warnings
from collections.abc import MutableMapping
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, ClassVar, Dict, Iterator, TypeVar

if sys.version_info < (3, 11):
    import tomli as tomllib
else:
    import tomllib

_CONFIG_FILE_NAME = ".motiftree.toml"

T = TypeVar("T")


class Settings(MutableMapping[str, str]):
    """Run-wide defaults for motiftree.

    Settings are collected from the following sources, in order of increasing
    priority:

    - Default values
    - `.motiftree.toml` files, starting from the root directory and down to
      the current directory
    - Environment variables starting with `MOTIFTREE_` (e.g., `MOTIFTREE_THREADS`)
    - Values set directly on the settings object

    The following settings have defaults:

    - `'threads'` -> `1` (worker threads for replicate and split-search work;
      never changes results)
    - `'replicates'` -> `100` (Monte Carlo re-randomizations, R)
    - `'seed'` -> `0`
    - `'log_level'` -> `WARNING`

    Sources are read once, on first access. Values are stored as strings; use
    `get_int` / `get_float` for typed access. Both key (`settings['threads']`)
    and attribute (`settings.threads`) access work.
    """

    _default: ClassVar[Dict[str, str]] = {
        "threads": "1",
        "replicates": "100",
        "seed": "0",
        "log_level": "WARNING",
    }
    _env_prefix: ClassVar[str] = "MOTIFTREE_"

    @staticmethod
    def _read_file(path: Path) -> Dict[str, str]:
        try:
            table = tomllib.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return {}
        except Exception as exc:
            warnings.warn(f"error reading config file {str(path)!r}: {exc}", stacklevel=3)
            return {}
        return {key: str(value) for key, value in table.items()}

    @cached_property
    def _config(self) -> Dict[str, str]:
        config = dict(self._default)
        cwd = Path.cwd()
        for directory in [*reversed(cwd.parents), cwd]:
            config.update(self._read_file(directory / _CONFIG_FILE_NAME))
        n = len(self._env_prefix)
        config.update(
            (key[n:].lower(), value)
            for key, value in os.environ.items()
            if key.startswith(self._env_prefix)
        )
        return config

    def _typed(self, key: str, convert: Callable[[str], T], what: str) -> T:
        value = self[key]
        try:
            return convert(value)
        except ValueError:
            raise ValueError(f"setting {key!r} must be {what}, got {value!r}") from None

    def get_int(self, key: str) -> int:
        return self._typed(key, int, "an integer")

    def get_float(self, key: str) -> float:
        return self._typed(key, float, "a number")

    def __getitem__(self, key: str) -> str:
        return self._config[key]

    def __setitem__(self, key: str, value: Any):
        self._config[key] = str(value)

    def __delitem__(self, key: str):
        del self._config[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._config)

    def __len__(self) -> int:
        return len(self._config)

    def __getattr__(self, name: str) -> str:
        if name.startswith("_"):
            raise AttributeError(name)
        try:
            return self._config[name]
        except KeyError:
            raise AttributeError(repr(name)) from None

    def __setattr__(self, name: str, value: Any):
        self[name] = value


def load_toml(path) -> dict:
    """Read a TOML document (experiment configs, `.motiftree.toml`)."""
    with open(path, "rb") as fid:
        return tomllib.load(fid)


settings = Settings()
