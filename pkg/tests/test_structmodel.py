import json

import numpy as np
import pytest

from cobalt.errors import ParseError, ValidationError
from cobalt.structmodel import (
    StructureModel,
    bundled_structure,
    from_dict,
    load_structure,
    save_structure,
    to_dict,
    validate,
)

from conftest import single_bar


def test_bundled_tenbeam_counts():
    s = bundled_structure()
    assert s.n_elements == 10
    assert s.n_nodes == 6
    assert s.e == 4
    assert int(s.supports.all(axis=1).sum()) == 2
    assert s.loaded_nodes.size == 1
    assert validate(s) == []


def test_tenbeam_fixed_nodes_are_left_and_load_is_downward():
    s = bundled_structure()
    fixed = np.flatnonzero(s.supports.all(axis=1))
    assert np.allclose(s.nodes[fixed, 0], s.nodes[:, 0].min())
    node = s.loaded_nodes[0]
    assert s.nominal_loads[node, 1] == -10000.0
    assert s.nodes[node, 0] == s.nodes[:, 0].max()
    assert s.nodes[node, 1] == s.nodes[:, 1].min()


def test_single_bar_valid():
    model, _ = single_bar()
    assert (model.n_nodes, model.n_elements, model.e) == (2, 1, 1)
    assert validate(model) == []


def _tenbeam_dict():
    return to_dict(bundled_structure())


def test_dangling_node_reference(tmp_path):
    d = _tenbeam_dict()
    d["elements"][0] = [0, 99, 0]
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(d))
    with pytest.raises(ValidationError, match="node 99"):
        load_structure(p)


def test_zero_length_element_and_empty_group():
    d = _tenbeam_dict()
    d["elements"][0] = [1, 1, 0]
    with pytest.raises(ValidationError, match="zero length"):
        from_dict(d)
    d = _tenbeam_dict()
    d["groups"].append("unused")
    with pytest.raises(ValidationError, match="unused"):
        from_dict(d)


def test_validate_diagnostics():
    s = bundled_structure()
    fields = {k: getattr(s, k) for k in s.__dataclass_fields__}
    fields["supports"] = np.zeros_like(s.supports)
    assert validate(StructureModel(**fields)) == ["no supports"]
    fields = {k: getattr(s, k) for k in s.__dataclass_fields__}
    fields["groups"] = s.groups + ("spare",)
    probs = validate(StructureModel(**fields))
    assert len(probs) == 1 and "spare" in probs[0]


def test_missing_file_and_bad_json(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_structure(tmp_path / "nope.json")
    p = tmp_path / "broken.json"
    p.write_text("{\n  \"nodes\": [\n")
    with pytest.raises(ParseError):
        load_structure(p)
    p.write_text(json.dumps({"nodes": [[0, 0], [1, 0]]}))
    with pytest.raises(ParseError, match="groups"):
        load_structure(p)


def _same(a: StructureModel, b: StructureModel):
    for k in a.__dataclass_fields__:
        va, vb = getattr(a, k), getattr(b, k)
        if isinstance(va, np.ndarray):
            np.testing.assert_array_equal(va, vb)
        else:
            assert va == vb, k


def test_round_trip(tmp_path):
    s = bundled_structure()
    p = tmp_path / "s.json"
    save_structure(s, p)
    _same(s, load_structure(p))
    _same(s, from_dict(to_dict(s), source=str(p)))


def test_characteristic_span():
    s = bundled_structure()
    assert s.characteristic_span() == pytest.approx(np.hypot(2 * 9.144, 9.144))
    assert s.characteristic_span() == s.characteristic_span()


def test_regrouped_and_with_loads():
    s = bundled_structure()
    r = s.regrouped([0, 1, 0, 1], ("a", "b"))
    assert r.e == 2 and validate(r) == []
    np.testing.assert_array_equal(s.with_loads(0.1).nominal_loads, s.nominal_loads * 0.1)
