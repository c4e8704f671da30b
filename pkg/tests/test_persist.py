"""Serialization: strict JSON, byte-stable NDJSON/CSV, checksums, manifests."""

import dataclasses
import json
import os

import numpy as np
import pytest

from fracldp.persist import (
    RunManifest,
    config_hash,
    encode_csv,
    encode_ndjson,
    json_ready,
    read_manifest,
    read_ndjson,
    sha256_bytes,
    sha256_file,
    write_manifest,
    write_ndjson,
)


def test_json_ready_passthrough_and_numpy():
    rec = {"a": np.float64(1.5), "b": np.int64(7), "c": np.bool_(True),
           "d": np.arange(3), "e": None, "f": "text"}
    out = json_ready(rec)
    assert out == {"a": 1.5, "b": 7, "c": True, "d": [0, 1, 2],
                   "e": None, "f": "text"}
    assert isinstance(out["a"], float) and isinstance(out["b"], int)


def test_json_ready_nonfinite_floats_become_strings():
    out = json_ready({"p": float("inf"), "q": float("-inf"),
                      "r": float("nan"), "s": np.float64("inf"),
                      "t": [np.float64("nan")]})
    assert out == {"p": "inf", "q": "-inf", "r": "nan", "s": "inf",
                   "t": ["nan"]}


def test_json_ready_dataclass_and_rejection():
    @dataclasses.dataclass
    class Row:
        x: float
        y: str

    assert json_ready(Row(2.0, "hi")) == {"x": 2.0, "y": "hi"}
    with pytest.raises(TypeError):
        json_ready({"f": object()})


def test_ndjson_sorted_keys_one_line_per_record():
    data = encode_ndjson([{"z": 1, "a": 2}, {"m": float("inf")}])
    lines = data.decode("utf-8").splitlines()
    assert lines[0] == '{"a":2,"z":1}'
    assert lines[1] == '{"m":"inf"}'
    assert data.endswith(b"\n")
    # strict parsers must accept every line
    for line in lines:
        json.loads(line)


def test_ndjson_never_emits_bare_infinity():
    data = encode_ndjson([{"v": float("inf")}])
    assert b"Infinity" not in data


def test_ndjson_utf8_not_escaped():
    data = encode_ndjson([{"note": "σ-finite"}])
    assert "σ-finite".encode("utf-8") in data


def test_ndjson_round_trip(tmp_path):
    path = tmp_path / "rows.ndjson"
    rows = [{"i": i, "val": i * 0.5} for i in range(5)]
    write_ndjson(path, rows)
    assert read_ndjson(path) == rows
    assert not [p for p in os.listdir(tmp_path) if p.startswith(".tmp-")]


def test_ndjson_byte_determinism(tmp_path):
    rows = [{"b": 2, "a": 1}, {"a": 3, "b": 4}]
    assert encode_ndjson(rows) == encode_ndjson([dict(reversed(list(r.items())))
                                                 for r in rows])


def test_ndjson_failed_write_leaves_target_alone(tmp_path):
    path = tmp_path / "rows.ndjson"
    write_ndjson(path, [{"ok": 1}])
    before = path.read_bytes()
    with pytest.raises(TypeError):
        write_ndjson(path, [{"ok": 1}, {"bad": object()}])
    assert path.read_bytes() == before


def test_csv_header_union_sorted_and_cells():
    data = encode_csv([{"b": 1, "a": True}, {"c": "x,y", "a": None}])
    lines = data.decode("utf-8").splitlines()
    assert lines[0] == "a,b,c"
    assert lines[1] == "true,1,"
    assert lines[2] == ',,"x,y"'


def test_csv_nested_values_embedded_as_json():
    data = encode_csv([{"list": [1, 2], "obj": {"k": 3}}])
    lines = data.decode("utf-8").splitlines()
    assert lines[0] == "list,obj"
    assert lines[1] == '"[1,2]","{""k"":3}"'


def test_checksums_agree(tmp_path):
    payload = b"some bytes\n"
    path = tmp_path / "f.bin"
    path.write_bytes(payload)
    assert sha256_file(path) == sha256_bytes(payload)
    assert config_hash("abc") == sha256_bytes(b"abc")


def test_manifest_round_trip(tmp_path):
    man = RunManifest(config_hash="deadbeef", artifact_version="0.1.0",
                      experiment="simulate", seed=7, wall_clock_s=1.25,
                      outputs={"records.ndjson": "cafe"},
                      blow_up_count=2, tolerances={"epsilon": 0.1})
    path = tmp_path / "manifest.json"
    write_manifest(path, man)
    loaded = read_manifest(path)
    assert loaded == man.as_dict()
    assert loaded["outputs"] == {"records.ndjson": "cafe"}
    # manifest bytes are deterministic too
    raw = path.read_bytes()
    write_manifest(path, man)
    assert path.read_bytes() == raw
