import json

import pytest

from sbpool.config import (
    apply_overrides,
    default_run_config,
    load_run_config,
    parse_ratio,
    run_config_from_json_obj,
)
from sbpool.errors import InvalidSpec, MalformedDocument, ShapeMismatch


class TestRatio:
    def test_string_form(self):
        assert parse_ratio("7:3") == (7.0, 3.0)

    def test_list_form(self):
        assert parse_ratio([3, 2]) == (3.0, 2.0)

    def test_bad_forms(self):
        for bad in ("7", "7:3:1", "a:b", [1], 5):
            with pytest.raises(InvalidSpec):
                parse_ratio(bad)


class TestOverrides:
    def test_nested_assignment(self):
        obj = {"train": {"penalty": {"b": 2.0}}}
        apply_overrides(obj, ["train.penalty.b=3.5", "train.seed=4"])
        assert obj["train"]["penalty"]["b"] == 3.5
        assert obj["train"]["seed"] == 4

    def test_json_values(self):
        obj = {}
        apply_overrides(obj, ["trunk.cnet_blocks=[4,8]", "name=plain"])
        assert obj["trunk"]["cnet_blocks"] == [4, 8]
        assert obj["name"] == "plain"

    def test_missing_equals_rejected(self):
        with pytest.raises(InvalidSpec):
            apply_overrides({}, ["nope"])


class TestRunConfig:
    def test_defaults_round_trip(self):
        cfg = default_run_config()
        again = run_config_from_json_obj(cfg.to_json_obj())
        assert again.trunk == cfg.trunk
        assert again.train == cfg.train
        assert again.data == cfg.data

    def test_ratio_string_accepted(self):
        obj = {"train": {"penalty": {"b": 2.0, "r": "3:2"}}}
        cfg = run_config_from_json_obj(obj)
        assert cfg.train.penalty.r == (3.0, 2.0)

    def test_load_with_overrides(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"train": {"lr": 0.1}}))
        cfg = load_run_config(path, ["train.lr=0.25"])
        assert cfg.train.lr == 0.25

    def test_missing_file(self, tmp_path):
        with pytest.raises(MalformedDocument):
            load_run_config(tmp_path / "nope.json")

    def test_not_json(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{")
        with pytest.raises(MalformedDocument):
            load_run_config(path)

    def test_validate_against_shape(self):
        cfg = default_run_config()
        cfg.validate_against((1, 16, 16))
        with pytest.raises(ShapeMismatch):
            cfg.validate_against((1, 8, 8))
