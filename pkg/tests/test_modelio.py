import json

import pytest

from magtorus.errors import ModelError
from magtorus.lab.config import bundled_model_doc, bundled_models
from magtorus.modelio import (build_model, dumps, load_model, model_hash, parse_model_dict, save_model,
                              serialize_model)


@pytest.mark.parametrize("name", bundled_models())
def test_bundled_round_trip_is_exact(name, tmp_path):
    doc = bundled_model_doc(name)
    m = build_model(parse_model_dict(doc))
    path = tmp_path / "m.json"
    save_model(m, path, name=doc.get("name", ""))
    assert json.loads(path.read_text()) == doc
    m2 = load_model(path)
    assert m2.lam.lam == m.lam.lam and m2.beta == m.beta
    assert model_hash(m2) == model_hash(m)


def test_hash_ignores_name_and_mode_order():
    doc = bundled_model_doc("flat_exact_beta")
    shuffled = json.loads(json.dumps(doc))
    shuffled["beta"][0]["modes"].reverse()
    shuffled["name"] = "other"
    assert model_hash(build_model(parse_model_dict(shuffled))) == model_hash(build_model(parse_model_dict(doc)))


def test_hash_changes_with_coefficients():
    doc = bundled_model_doc("flat_constant_b")
    other = json.loads(json.dumps(doc))
    other["beta"][0]["modes"][0]["a"] = 1.0000001
    assert model_hash(build_model(parse_model_dict(other))) != model_hash(build_model(parse_model_dict(doc)))


def test_alpha_is_optional_and_serializable():
    m = build_model(parse_model_dict(bundled_model_doc("conformal_n3")))
    doc = serialize_model(m, include_alpha=True)
    m2 = build_model(parse_model_dict(json.loads(dumps(doc))))
    assert all(a == b for a, b in zip(m2.gauge.alpha, m.gauge.alpha))


@pytest.mark.parametrize("mutate", [
    lambda d: d.update(schema_version=2),
    lambda d: d.pop("dim"),
    lambda d: d["beta"].append({"i": 2, "j": 1, "modes": []}),
    lambda d: d["lambda"].append({"k": [1], "a": 1.0}),
    lambda d: d.update(alpha=[[]]),
])
def test_malformed_documents(mutate):
    doc = bundled_model_doc("flat_constant_b")
    mutate(doc)
    with pytest.raises(ModelError):
        parse_model_dict(doc)
