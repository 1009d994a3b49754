"""Exceptions, fancy printing, seeded generators and array-bundle persistence."""

from __future__ import annotations

import io
import json
import os
import zipfile
from collections.abc import Mapping, Sequence
from typing import Any, Literal

import numpy as np

# colour list
c_colors = {
    "HEADER": "\033[95m",
    "OKBLUE": "\033[94m",
    "OKCYAN": "\033[96m",
    "OKGREEN": "\033[92m",
    "WARNING": "\033[93m",
    "FAIL": "\033[91m",
    "BOLD": "\033[1m",
    "UNDERLINE": "\033[4m",
}
end_c = "\033[0m"


def cstr(
    x: Any,
    ctype: Literal[
        "HEADER", "OKBLUE", "OKCYAN", "OKGREEN", "WARNING", "FAIL", "BOLD", "UNDERLINE"
    ],
) -> str:
    """Makes a string colourful.

    Args:
        x (Any): the string
        ctype (str): the colour

    Returns:
        str: the coloured string

    """
    return f"{c_colors[ctype]}{x}{end_c}"


class AlphaCLException(Exception):
    """Base exception for everything raised by alphacl."""

    def __init__(self, message: str = ""):
        """__init__.

        Args:
            message (str): the message

        """
        message = cstr(message, "FAIL")
        super().__init__(message)
        self.message = message


class ShapeError(AlphaCLException):
    """Array shapes do not chain or do not match."""


class DomainError(AlphaCLException):
    """A pointwise function was evaluated outside its domain."""


class NumericOverflowError(AlphaCLException):
    """An exponential would overflow float64."""


class SingularityError(AlphaCLException):
    """A normalization head received a zero vector."""


class UnsupportedCaseError(AlphaCLException):
    """The requested combination of options is not implemented."""


class HypothesisError(AlphaCLException):
    """The hypothesis of an analysis routine does not hold for the given input."""


class ConvergenceError(AlphaCLException):
    """An iterative solver ran out of iterations."""

    def __init__(self, message: str = "", diagnostics: Mapping[str, Any] | None = None):
        """__init__.

        Args:
            message (str): the message
            diagnostics (Mapping[str, Any] | None): solver state at the point of failure

        """
        self.diagnostics = dict(diagnostics or {})
        super().__init__(f"{message} {self.diagnostics}" if self.diagnostics else message)


class DivergenceError(AlphaCLException):
    """A simulation produced non-finite values."""

    def __init__(self, message: str = "", step: int = -1):
        """__init__.

        Args:
            message (str): the message
            step (int): the step at which non-finite values were first seen

        """
        self.step = step
        super().__init__(f"{message} (step {step})")


def as_float_array(x: Any, name: str, ndim: int | None = None) -> np.ndarray:
    """Casts to a float64 array, optionally checking the number of dimensions.

    Args:
        x (Any): array-like
        name (str): name used in the error message
        ndim (int | None): required number of dimensions

    Returns:
        np.ndarray:

    """
    array = np.asarray(x, dtype=np.float64)
    if ndim is not None and array.ndim != ndim:
        raise ShapeError(f"`{name}` must have {ndim} dimensions, got shape {array.shape}.")
    return array


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based generator keyed by a seed and optional stream keys.

    Philox is counter-based, so the stream only depends on `(seed, *keys)` and is
    identical across platforms.

    Args:
        seed (int): the run seed
        keys (int): stream keys, e.g. a suite index or a sub-seed

    Returns:
        np.random.Generator:

    """
    sequence = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, keys)])
    return np.random.Generator(np.random.Philox(sequence))


def check_finite(arrays: Sequence[np.ndarray], what: str, step: int) -> None:
    """Raises `DivergenceError` when any array holds NaN or inf.

    Args:
        arrays (Sequence[np.ndarray]): arrays to check
        what (str): description of the simulation
        step (int): current step

    """
    if not all(np.isfinite(a).all() for a in arrays):
        raise DivergenceError(f"Non-finite values encountered in {what}.", step=step)


def dump_arrays(
    fileobj: io.BytesIO | io.BufferedRandom,
    init_params: Mapping[str, Any],
    arrays: Sequence[np.ndarray],
) -> None:
    """Dumps a parameter dict and a list of arrays into a zip fileobj.

    Args:
        fileobj (io.BytesIO | io.BufferedRandom): target
        init_params (Mapping[str, Any]): json-serializable parameters
        arrays (Sequence[np.ndarray]): arrays, stored in order

    Returns:
        None:
    """
    if not fileobj.writable():
        raise ValueError("The file object must be writable.")

    with zipfile.ZipFile(fileobj, "w", zipfile.ZIP_DEFLATED) as zipf:
        dict_bytes = json.dumps(dict(init_params)).encode("utf-8")
        zipf.writestr("init_params.json", dict_bytes)

        for i, array in enumerate(arrays):
            with io.BytesIO() as array_buffer:
                np.save(array_buffer, np.asarray(array), allow_pickle=False)
                zipf.writestr(f"array_{i:04d}.npy", array_buffer.getvalue())


def load_arrays(
    fileobj: io.BytesIO | io.BufferedRandom,
) -> tuple[dict[str, Any], list[np.ndarray]]:
    """Loads what `dump_arrays` wrote.

    Args:
        fileobj (io.BytesIO | io.BufferedRandom): source

    Returns:
        tuple[dict[str, Any], list[np.ndarray]]: the parameters and arrays in order
    """
    if not fileobj.readable():
        raise ValueError("The file object must be readable.")

    fileobj.seek(0)
    with zipfile.ZipFile(fileobj, "r") as zipf:
        init_params = json.loads(zipf.read("init_params.json").decode("utf-8"))

        arrays = []
        for name in sorted(zipf.namelist()):
            if name.startswith("array_"):
                with zipf.open(name) as array_file:
                    arrays.append(np.load(array_file))

    return init_params, arrays


def write_csv(path: str | os.PathLike, header: Sequence[str], rows: np.ndarray) -> None:
    """Writes a float table as CSV with 17 significant digits.

    Args:
        path (str | os.PathLike): destination
        header (Sequence[str]): column names
        rows (np.ndarray): 2D array of values

    """
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if rows.size and rows.shape[1] != len(header):
        raise ShapeError(f"CSV header has {len(header)} columns but rows have {rows.shape[1]}.")
    np.savetxt(path, rows, fmt="%.17g", delimiter=",", header=",".join(header), comments="")
