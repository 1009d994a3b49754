"""Tests the utilities module."""

from __future__ import annotations

import io
import tempfile

import numpy as np
import pytest

from alphacl.utils import (
    AlphaCLException,
    ConvergenceError,
    DivergenceError,
    ShapeError,
    as_float_array,
    check_finite,
    cstr,
    dump_arrays,
    load_arrays,
    make_rng,
    write_csv,
)


def test_cstr():
    """Colours wrap the text and reset afterwards."""
    text = cstr("hello", "OKGREEN")
    assert text.startswith("\033[92m")
    assert text.endswith("\033[0m")
    assert "hello" in text


def test_exceptions_carry_messages():
    """Subclasses keep the extra context they are given."""
    with pytest.raises(AlphaCLException):
        raise ShapeError("bad shape")

    error = ConvergenceError("no luck", {"iterations": 3})
    assert error.diagnostics == {"iterations": 3}
    assert "iterations" in str(error)

    error = DivergenceError("blew up", step=17)
    assert error.step == 17
    assert "(step 17)" in str(error)


def test_as_float_array():
    """Casting keeps values and checks dimensions."""
    array = as_float_array([[1, 2], [3, 4]], "x", ndim=2)
    assert array.dtype == np.float64
    with pytest.raises(ShapeError):
        as_float_array([1, 2, 3], "x", ndim=2)


def test_make_rng_streams():
    """The same keys give the same stream; different keys give different streams."""
    a = make_rng(7, 1, 2).standard_normal(5)
    b = make_rng(7, 1, 2).standard_normal(5)
    c = make_rng(7, 2, 1).standard_normal(5)
    d = make_rng(8, 1, 2).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_check_finite():
    """NaN and inf raise with the step attached."""
    check_finite([np.ones(3), np.zeros((2, 2))], "nothing", step=0)
    for bad in (np.nan, np.inf, -np.inf):
        with pytest.raises(DivergenceError) as info:
            check_finite([np.ones(3), np.array([1.0, bad])], "something", step=4)
        assert info.value.step == 4


def test_dump_load_arrays():
    """Arrays and parameters survive a dump and load, in order."""
    rng = make_rng(0)
    arrays = [rng.standard_normal((3, 4)), rng.standard_normal(5), np.eye(2)]
    params = {"kind": "encoder", "dims": [4, 3]}

    for fileobj in (io.BytesIO(), tempfile.TemporaryFile()):
        dump_arrays(fileobj, params, arrays)
        loaded_params, loaded = load_arrays(fileobj)
        assert loaded_params == params
        assert len(loaded) == len(arrays)
        for original, restored in zip(arrays, loaded):
            assert np.array_equal(original, restored), f"{original=}, {restored=}"
        fileobj.close()


def test_write_csv(tmp_path):
    """CSV output has a plain header and round-trips float64 exactly."""
    path = tmp_path / "table.csv"
    rows = np.array([[0.1, 1.0 / 3.0], [2.0, -1e-300]])
    write_csv(path, ["a", "b"], rows)

    lines = path.read_text().splitlines()
    assert lines[0] == "a,b"
    restored = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.array_equal(restored, rows)

    with pytest.raises(ShapeError):
        write_csv(path, ["a"], rows)
