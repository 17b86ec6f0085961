import json
from pathlib import Path

import pytest

from fodkit.cli import main
from fodkit.config import RunConfig

jsonschema = pytest.importorskip("jsonschema")

SCHEMAS = Path(__file__).resolve().parents[1] / "docs" / "schema"


def validate(doc, name):
    schema = json.loads((SCHEMAS / f"{name}.schema.json").read_text())
    jsonschema.Draft202012Validator.check_schema(schema)
    jsonschema.validate(doc, schema)


def test_config_schema_matches_dataclass():
    schema = json.loads((SCHEMAS / "config.schema.json").read_text())
    defaults = RunConfig().to_dict()
    assert set(schema["properties"]) == set(defaults)
    for key, prop in schema["properties"].items():
        assert prop["default"] == defaults[key], key
    validate(defaults, "config")


def test_outputs_match_schemas(tmp_path, monkeypatch):
    monkeypatch.setenv("FODKIT_CACHE_DIR", str(tmp_path / "cache"))
    sid = "2fib_sep90_b1000_n41_snr20"
    assert main(["precompute", "--out", str(tmp_path / "pre")]) == 0
    assert main(["simulate", "--scenario", sid, "--reps", "1", "--out", str(tmp_path / "sim")]) == 0
    ds = tmp_path / "sim" / sid
    assert main(["fit", "--method", "super-csd", "--lmax-s", "8", "--dataset", str(ds),
                 "--out", str(tmp_path / "fit")]) == 0
    assert main(["peaks", "--estimates", str(tmp_path / "fit"), "--out", str(tmp_path / "pk")]) == 0
    validate(json.loads((ds / "truth.json").read_text()), "scenario")
    validate(json.loads((tmp_path / "fit" / "estimate_rep000.json").read_text()), "estimate")
    validate(json.loads((tmp_path / "pk" / "peaks_rep000.json").read_text()), "peaks")
    for d in ("pre", "sim/" + sid, "fit", "pk"):
        validate(json.loads((tmp_path / d / "provenance.json").read_text()), "provenance")
