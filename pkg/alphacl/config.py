"""Flat `key=value` configuration text.

Tokens are separated by whitespace or newlines, `#` starts a comment, and values are
coerced to bool, int, float or left as strings, in that order.
"""

from __future__ import annotations

import os
from collections.abc import Mapping, Sequence
from typing import Any

from alphacl.utils import AlphaCLException


class ConfigError(AlphaCLException):
    """Malformed configuration text."""


def coerce_value(raw: str) -> bool | int | float | str:
    """Turns the text of a value into the most specific scalar type.

    Args:
        raw (str): raw

    Returns:
        bool | int | float | str:

    """
    lowered = raw.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw


def parse_flat(text: str) -> dict[str, Any]:
    """Parses flat `key=value` text into a dict.

    Args:
        text (str): e.g. `"kind=infonce tau=0.5 eps=0"`

    Returns:
        dict[str, Any]:

    """
    params: dict[str, Any] = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0]
        for token in line.split():
            if "=" not in token:
                raise ConfigError(f"Expected `key=value`, got `{token}`.")
            key, value = token.split("=", 1)
            if not key:
                raise ConfigError(f"Empty key in `{token}`.")
            params[key.strip().replace("-", "_")] = coerce_value(value.strip())
    return params


def format_flat(params: Mapping[str, Any]) -> str:
    """Formats a dict as flat `key=value` text on one line.

    Floats use `repr` so that they parse back to the same float64.

    Args:
        params (Mapping[str, Any]): params

    Returns:
        str:

    """
    tokens = []
    for key, value in params.items():
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        if any(c.isspace() for c in text) or "=" in text:
            raise ConfigError(f"Value for `{key}` cannot be written flat: {text!r}.")
        tokens.append(f"{key}={text}")
    return " ".join(tokens)


def load_flat_file(path: str | os.PathLike) -> dict[str, Any]:
    """Reads a flat config file.

    Args:
        path (str | os.PathLike): path

    Returns:
        dict[str, Any]:

    """
    with open(path, encoding="utf-8") as f:
        return parse_flat(f.read())


def _check_file_value(key: str, value: Any, default: Any) -> Any:
    """Casts a config-file value to the type of its default.

    Args:
        key (str): key
        value (Any): coerced file value
        default (Any): built-in default

    Returns:
        Any:

    """
    if isinstance(default, bool) or isinstance(value, bool):
        if type(value) is not type(default):
            raise ConfigError(f"`{key}` expects {type(default).__name__}, got `{value}`.")
        return value
    if isinstance(default, str):
        return str(value)
    if isinstance(default, float) and isinstance(value, (int, float)):
        return float(value)
    if isinstance(default, int) and isinstance(value, int):
        return value
    raise ConfigError(f"`{key}` expects {type(default).__name__}, got `{value}`.")


def resolve(
    defaults: Mapping[str, Any],
    file_params: Mapping[str, Any] | None = None,
    flag_params: Mapping[str, Any] | None = None,
    choices: Mapping[str, Sequence[str]] | None = None,
) -> dict[str, Any]:
    """Merges configuration layers: defaults < config file < command-line flags.

    Flags that were not given (`None`) do not override anything. File values take the
    type of their default, and keys listed in `choices` must hold one of their choices.

    Args:
        defaults (Mapping[str, Any]): built-in defaults
        file_params (Mapping[str, Any] | None): values from a config file
        flag_params (Mapping[str, Any] | None): values from the command line
        choices (Mapping[str, Sequence[str]] | None): allowed values per key

    Returns:
        dict[str, Any]:

    """
    resolved = dict(defaults)
    for key, value in (file_params or {}).items():
        if key not in defaults:
            raise ConfigError(f"Unknown config key `{key}`. Known keys: {sorted(defaults)}.")
        resolved[key] = _check_file_value(key, value, defaults[key])
    for key, value in (flag_params or {}).items():
        if value is not None:
            resolved[key] = value
    for key, allowed in (choices or {}).items():
        if key in resolved and resolved[key] not in allowed:
            raise ConfigError(
                f"Invalid value `{resolved[key]}` for `{key}`, expected one of {list(allowed)}."
            )
    return resolved
