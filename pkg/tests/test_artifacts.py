import numpy as np
import pandas as pd
import pytest

from artifacts import (SCHEMA_VERSION, format_header, parse_header, read_csv, read_json, write_csv,
                       write_json)
from errors import SchemaError


def test_header_round_trip():
    line = format_header({"seed": 3, "grid": (1.0, 2.0), "family": "logistic"})
    assert line == f"# schema_version={SCHEMA_VERSION} seed=3 grid=1.0,2.0 family=logistic\n"
    assert parse_header(line) == {"schema_version": "1", "seed": "3", "grid": "1.0,2.0", "family": "logistic"}


def test_parse_header_rejects_malformed_lines():
    with pytest.raises(SchemaError):
        parse_header("user_id,label\n")
    with pytest.raises(SchemaError):
        parse_header("# schema_version=1 dangling\n")


def test_csv_carries_meta_and_precision(tmp_path):
    frame = pd.DataFrame({"user_id": [0, 1], "p": [1 / 3, 0.25]})
    path = tmp_path / "sub" / "table.csv"
    write_csv(path, frame, {"seed": 11})
    text = path.read_text(encoding="utf-8")
    assert text.startswith("# schema_version=1 seed=11\nuser_id,p\n")
    assert "0.3333333333333333" in text

    loaded, meta = read_csv(path)
    assert meta["seed"] == "11"
    assert loaded["user_id"].tolist() == [0, 1]
    assert loaded["p"].tolist() == [1 / 3, 0.25]


def test_csv_floats_round_trip_exactly(tmp_path):
    values = [1 / 3, 0.1 + 0.2, 1e-300, 123456789.123456789, float(np.nextafter(1.0, 2.0)), -2.5e-17]
    path = tmp_path / "exact.csv"
    write_csv(path, pd.DataFrame({"x": values}), {})
    loaded, _ = read_csv(path)
    assert loaded["x"].tolist() == values


def test_csv_contract_failures(tmp_path):
    future = tmp_path / "future.csv"
    future.write_text("# schema_version=2\na\n1\n", encoding="utf-8")
    with pytest.raises(SchemaError, match="schema_version"):
        read_csv(future)

    headless = tmp_path / "headless.csv"
    headless.write_text("a\n1\n", encoding="utf-8")
    with pytest.raises(SchemaError):
        read_csv(headless)

    empty = tmp_path / "empty.csv"
    empty.write_text("# schema_version=1\n", encoding="utf-8")
    with pytest.raises(SchemaError):
        read_csv(empty)

    with pytest.raises(SchemaError):
        read_csv(tmp_path / "missing.csv")


def test_json_is_sorted_and_checked(tmp_path):
    path = tmp_path / "model.json"
    write_json(path, {"b": 1, "a": [1, 2]})
    text = path.read_text(encoding="utf-8")
    assert text.index('"a"') < text.index('"b"')
    assert read_json(path) == {"a": [1, 2], "b": 1}

    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(SchemaError):
        read_json(path)
    with pytest.raises(SchemaError):
        read_json(tmp_path / "missing.json")
