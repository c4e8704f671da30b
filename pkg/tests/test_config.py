"""Config parsing: fail-closed keys, precise errors, defaults, round-trips."""

import json

import numpy as np
import pytest

from fracldp.config import (
    ConfigError,
    build_datum,
    build_grid,
    build_model_from_config,
    build_timegrid,
    parse_config,
    serialize_config,
)


def minimal(name="simulate", **sections):
    doc = {"experiment": {"name": name}}
    doc.update(sections)
    return json.dumps(doc)


def errors_of(text):
    with pytest.raises(ConfigError) as excinfo:
        parse_config(text)
    return excinfo.value.errors


def error_keys(text):
    return {e["key"] for e in errors_of(text)}


def test_minimal_config_fills_defaults():
    cfg = parse_config(minimal())
    assert cfg.run == {"seed": 0, "output_dir": "runs/out", "format": "ndjson",
                      "workers": 1}
    assert cfg.timegrid == {"horizon": 0.25, "n_steps": 64}
    assert cfg.grid["points_per_dim"] == 128
    assert cfg.model == {"preset": "default"}
    assert cfg.experiment["epsilon"] == 0.1
    assert cfg.experiment["n_paths"] == 200


def test_grid_defaults_follow_preset():
    cfg = parse_config(minimal(model={"preset": "scalar-linear"}))
    assert cfg.grid == {"dim": 1, "half_length": 2.0, "points_per_dim": 8,
                       "alpha": 1.0}
    cfg = parse_config(minimal(model={"preset": "fractional"}))
    assert cfg.grid["alpha"] == 0.6
    # explicit grid keys still win
    cfg = parse_config(minimal(model={"preset": "scalar-linear"},
                               grid={"points_per_dim": 16}))
    assert cfg.grid["points_per_dim"] == 16
    assert cfg.grid["half_length"] == 2.0


@pytest.mark.parametrize("name", [
    "simulate", "skeleton", "rate-min", "level-set", "mc-ldp",
    "validate-model", "tail-scan", "cvs-sweep",
])
def test_round_trip_every_experiment(name):
    cfg = parse_config(minimal(name))
    again = parse_config(serialize_config(cfg))
    assert again == cfg
    assert serialize_config(again) == serialize_config(cfg)


def test_unknown_keys_are_fatal_everywhere():
    assert "mystery" in error_keys('{"experiment": {"name": "simulate"}, "mystery": 1}')
    assert "grid.bogus" in error_keys(minimal(grid={"bogus": 2}))
    assert "run.colour" in error_keys(minimal(run={"colour": "red"}))
    assert "experiment.extra" in error_keys(
        '{"experiment": {"name": "simulate", "extra": 1}}'
    )


def test_alpha_range_error_names_key_and_range():
    errs = errors_of(minimal(grid={"alpha": 1.5}))
    entry = next(e for e in errs if e["key"] == "grid.alpha")
    assert entry["expected"] == "float in (0, 1]"
    assert entry["found"] == "1.5"


def test_q_cross_field_error_cites_range():
    errs = errors_of(minimal(model={"preset": "built", "q": 3.2}))
    entry = next(e for e in errs if e["key"] == "model.q")
    assert "[2, 3]" in entry["expected"]
    # at the admissibility boundary the config is fine
    cfg = parse_config(minimal(model={"preset": "built", "q": 3.0}))
    assert cfg.model["q"] == 3.0


def test_built_keys_forbidden_for_presets():
    errs = errors_of(minimal(model={"preset": "default", "q": 2.5}))
    entry = next(e for e in errs if e["key"] == "model.q")
    assert "not allowed" in entry["expected"]


def test_experiment_name_required_and_known():
    assert "experiment.name" in error_keys('{"experiment": {}}')
    assert "experiment.name" in error_keys('{"experiment": {"name": "dance"}}')
    assert "experiment.name" in error_keys("{}")


def test_range_violations_reported():
    assert "experiment.n_paths" in error_keys(
        '{"experiment": {"name": "mc-ldp", "n_paths": 50}}'
    )
    assert "experiment.eps_list" in error_keys(
        '{"experiment": {"name": "mc-ldp", "eps_list": [0.2, 0.5]}}'
    )
    assert "timegrid.n_steps" in error_keys(minimal(timegrid={"n_steps": 0}))
    assert "grid.points_per_dim" in error_keys(minimal(grid={"points_per_dim": 100}))
    assert "run.format" in error_keys(minimal(run={"format": "yaml"}))
    assert "run.seed" in error_keys(minimal(run={"seed": -1}))


def test_bool_is_not_an_integer():
    assert "timegrid.n_steps" in error_keys(minimal(timegrid={"n_steps": True}))


def test_datum_spec_validation():
    assert "experiment.datum" in error_keys(
        '{"experiment": {"name": "simulate", "datum": {"kind": "step"}}}'
    )
    assert "experiment.datum" in error_keys(
        '{"experiment": {"name": "simulate", "datum": {"kind": "bump", "radius": -1, "amplitude": 1}}}'
    )
    assert "experiment.datum" in error_keys(
        '{"experiment": {"name": "simulate", "datum": {"kind": "constant"}}}'
    )
    ok = parse_config(
        '{"experiment": {"name": "simulate", '
        '"datum": {"kind": "cosine", "amplitude": 0.4, "mode": 2}}}'
    )
    assert ok.experiment["datum"]["mode"] == 2


def test_all_errors_collected_at_once():
    errs = errors_of(minimal(grid={"alpha": 2.0, "dim": 9},
                             run={"workers": 0}))
    keys = {e["key"] for e in errs}
    assert {"grid.alpha", "grid.dim", "run.workers"} <= keys
    for e in errs:
        assert set(e) == {"key", "expected", "found"}


def test_document_level_failures():
    with pytest.raises(ConfigError):
        parse_config("not json at all {")
    with pytest.raises(ConfigError):
        parse_config("[1, 2, 3]")


def test_builders_produce_matching_objects():
    cfg = parse_config(minimal(model={"preset": "scalar-linear"},
                               timegrid={"horizon": 1.0, "n_steps": 32}))
    grid = build_grid(cfg)
    assert grid.shape == (8,) and grid.half_length == 2.0
    tg = build_timegrid(cfg)
    assert tg.horizon == 1.0 and tg.n_steps == 32
    model = build_model_from_config(cfg)
    assert model.grid == grid
    assert model.noise.n_modes == 1


def test_build_model_built_preset():
    cfg = parse_config(minimal(model={"preset": "built", "q": 2.0,
                                      "noise_form": "smooth_power"}))
    model = build_model_from_config(cfg)
    assert model.noise.q == 2.0


def test_build_datum_kinds():
    cfg = parse_config(minimal(model={"preset": "scalar-linear"}))
    model = build_model_from_config(cfg)
    const = build_datum({"kind": "constant", "level": 0.7}, model, "scalar-linear")
    assert np.all(const.values == 0.7)
    auto = build_datum("auto", model, "scalar-linear")
    assert np.all(auto.values == auto.values.flat[0])  # constant for the reduction
    cfg2 = parse_config(minimal())
    model2 = build_model_from_config(cfg2)
    bump = build_datum("auto", model2, "default")
    assert bump.values.max() > 0 and bump.values[0] == 0.0  # compactly supported
    cosine = build_datum({"kind": "cosine", "amplitude": 0.5, "mode": 1}, model2, "default")
    assert np.isclose(cosine.values.max(), 0.5)
