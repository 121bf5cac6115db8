"""Run configuration parsing and validation."""
import json

import pytest

from src.models.run_config import CompareConfig, RunConfig, config_hash, load_run_config, parse_config
from src.utils.errors import ConfigError


def _fields(payload, model=RunConfig):
    with pytest.raises(ConfigError) as err:
        parse_config(payload, model)
    return err.value.fields


def test_defaults():
    cfg = parse_config({})
    assert cfg.method.kind == "DBS"
    assert cfg.train.K == 5000
    assert cfg.eval_every() == 50
    assert cfg.step_scale() == 0.01
    assert parse_config({"target": {"name": "manywell", "d": 5, "m": 5}}).step_scale() == 0.1


def test_unknown_keys_are_rejected():
    fields = _fields({"train": {"K": 10, "warmup": 3}})
    assert any(f.startswith("train.warmup") for f in fields)


def test_field_messages_name_the_field():
    fields = _fields({"train": {"batch": 1}, "schedule": {"N": 0}})
    assert any(f.startswith("train.batch") for f in fields)
    assert any(f.startswith("schedule.N") for f in fields)


@pytest.mark.parametrize("payload", [
    {"method": {"regime": "overdamped", "integrator": "obabo"}},
    {"method": {"kind": "MCD", "drift": "zero"}},
    {"target": {"name": "manywell", "d": 2, "m": 3}},
    {"target": {"name": "funnel", "d": 1}},
    {"train": {"loss": "kl", "proposal": "uncontrolled"}},
    {"target": {"name": "logistic"}},
    {"target": {"name": "logistic", "dataset_path": "no/such/file.csv"}},
    {"version": 2},
])
def test_invalid_combinations(payload):
    assert _fields(payload)


def test_load_from_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"train": {"K": 7}}))
    assert load_run_config(path).train.K == 7
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_run_config(bad)


def test_config_hash_is_stable():
    a = parse_config({"train": {"seed": 1}})
    b = parse_config({"train": {"seed": 1}})
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(parse_config({"train": {"seed": 2}}))


def test_compare_cells_collapse_overdamped_integrators():
    compare = parse_config({
        "methods": ["DBS", "ULA"],
        "regimes": ["overdamped", "underdamped"],
        "integrators": ["obab", "obabo"],
        "N": [4],
        "seeds": [0, 1],
    }, CompareConfig)
    cells = compare.cells()
    # per method and seed: one overdamped EM cell plus two underdamped cells
    assert len(cells) == 2 * 2 * 3
    overdamped = [c for c in cells if c.method.regime == "overdamped"]
    assert {c.method.integrator for c in overdamped} == {"em"}
    assert {c.train.seed for c in cells} == {0, 1}


def test_bare_dataset_names_resolve_to_bundled_files(monkeypatch):
    from pathlib import Path

    from src.config import settings

    bundled = Path(__file__).resolve().parents[1] / "data" / "datasets"
    monkeypatch.setattr(settings, "BRIDGECRAFT_DATA_DIR", str(bundled))
    cfg = parse_config({"target": {"name": "logistic", "d": 3, "dataset_path": "separable_2d.csv"}})
    assert Path(cfg.target.dataset_path) == bundled / "separable_2d.csv"
    assert "target" in _fields({"target": {"name": "logistic", "d": 3, "dataset_path": "nope.csv"}})[0]
