import math

import numpy as np
from pytest import raises

from motiftree import formatting
from motiftree.formatting import MultiFormatSpec


def test_format_value_defaults():
    assert formatting.format_value(1.23456) == "1.2346"
    assert formatting.format_value(7) == "7"
    assert formatting.format_value(np.float64(0.5)) == "0.5000"
    assert formatting.format_value(True) == "True"
    assert formatting.format_value("d1") == "d1"


def test_format_value_missing():
    assert formatting.format_value(None) == "-"
    assert formatting.format_value(math.nan) == "-"


def test_format_value_override():
    assert formatting.format_value(1.23456, {float: ".2f"}) == "1.23"
    assert formatting.format_value(1.23456) == "1.2346"


def test_set_global_format_spec():
    old = formatting.set_global_format_spec({float: ".1f"})
    try:
        assert formatting.format_value(2.25) == "2.2"
    finally:
        formatting.set_global_format_spec(old)
    assert formatting.format_value(2.25) == "2.2500"


def test_multi_format_spec_superclass():
    spec = MultiFormatSpec()
    spec.register_format(int, "03d")
    assert spec.format(np.int64(5)) == "005"
    assert spec.get_format(1.5) == ""
    with raises(TypeError):
        spec.register_format("int", "d")


def test_multi_format_spec_or():
    a = MultiFormatSpec({int: "d"})
    b = a | {float: ".1f"}
    assert b.get_format(1.0) == ".1f"
    assert a.get_format(1.0) == ""


def test_format_table():
    table = formatting.format_table(["leaf", "value"], [["d1", 1.5], ["d2", None]])
    assert table.splitlines() == [
        "leaf value",
        "---- ------",
        "d1   1.5000",
        "d2   -",
    ]


def test_format_table_row_mismatch():
    with raises(ValueError, match="2 columns"):
        formatting.format_table(["a", "b"], [[1]])
