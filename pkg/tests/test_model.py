"""Model loading, validation, and coupling structure."""

import json

import numpy as np
import pytest

from dynident import (
    ModelParseError,
    ModelValidationError,
    load_model,
    load_shipped_model,
    model_from_dict,
    save_model,
    shipped_model_path,
    validate_coupling,
)


def minimal_dict(**overrides):
    base = {
        "schema": 1,
        "name": "mini",
        "motor_count": 2,
        "gravity": [0.0, 0.0, -9.81],
        "basis": ["1", "2"],
        "joints": [
            {
                "name": "1",
                "kind": "revolute",
                "predecessor": "base",
                "dh": {"a": 0.0, "alpha": 0.0, "d": 0.1, "theta": "coord"},
                "coordinate": {"qd1": 1.0},
                "flags": {"link_inertia": True, "friction": True},
                "motor": 1,
                "limits": {"q": [-1.0, 1.0], "dq": [-2.0, 2.0]},
            },
            {
                "name": "2",
                "kind": "revolute",
                "predecessor": "1",
                "dh": {"a": 0.3, "alpha": "-90 deg", "d": 0.0, "theta": "coord"},
                "coordinate": {"qd2": 1.0},
                "flags": {"link_inertia": True, "friction": True},
                "motor": 2,
                "limits": {"q": [-1.2, 1.2], "dq": [-2.0, 2.0]},
            },
        ],
        "com_hulls": {"default": {"lower": [-0.3, -0.3, -0.3],
                                  "upper": [0.3, 0.3, 0.3]}},
    }
    base.update(overrides)
    return base


class TestShippedModels:
    def test_master_arm_coupling_block(self):
        model = load_shipped_model("mtm")
        # measured gear/cable ratios of the parallelogram drive
        expected = np.array([
            [1.0, 0.0, 0.0],
            [-1.0, 1.0, 0.0],
            [0.6697, -0.6697, 1.0],
        ])
        rows = [model.E[model.joint_index[j]][1:4] for j in ("2", "3", "4")]
        np.testing.assert_allclose(np.array(rows), expected, atol=0, rtol=0)

    def test_patient_arm_wrist_block(self):
        model = load_shipped_model("psm")
        with open(shipped_model_path("psm"), encoding="utf-8") as fh:
            raw = json.load(fh)
        block = np.array(raw["coupling"]["blocks"][0]["matrix"])
        expected = np.array([
            [1.0186, 0.0, 0.0],
            [-0.8306, 0.6089, 0.6089],
            [0.0, -1.2177, 1.2177],
        ])
        np.testing.assert_allclose(block, expected, atol=0, rtol=0)
        # composed rows: roll is direct, jaws split the gripper difference
        i = model.joint_index
        e = np.eye(7)
        driven = block @ e[4:7]
        np.testing.assert_allclose(model.E[i["5"]], driven[0], atol=1e-15)
        np.testing.assert_allclose(model.E[i["6"]], driven[1] - 0.5 * driven[2],
                                   atol=1e-15)
        np.testing.assert_allclose(model.E[i["7"]], driven[1] + 0.5 * driven[2],
                                   atol=1e-15)
        np.testing.assert_allclose(model.E[i["F67"]],
                                   model.E[i["6"]] - model.E[i["7"]],
                                   atol=1e-15)

    def test_parallelogram_rows_are_affine_in_basis(self):
        model = load_shipped_model("mtm")
        E = model.E
        i = model.joint_index
        # passive row 3p tracks the sum of the two actuated links
        np.testing.assert_allclose(E[i["3p"]], E[i["2"]] + E[i["3"]],
                                   atol=1e-15)
        np.testing.assert_allclose(E[i["3pp"]], -E[i["3"]], atol=1e-15)
        np.testing.assert_allclose(E[i["3ppp"]], E[i["3"]], atol=1e-15)

    def test_basis_rows_invertible_roundtrip(self):
        for name in ("mtm", "psm"):
            model = load_shipped_model(name)
            rows = model.E[model.coupling.basis_indices]
            off = model.e0[model.coupling.basis_indices]
            rng = np.random.default_rng(0)
            q_m = rng.standard_normal((20, model.motor_count))
            q_b = q_m @ rows.T + off
            back = (q_b - off) @ np.linalg.inv(rows).T
            np.testing.assert_allclose(back, q_m, atol=1e-12)

    def test_validate_coupling_passes_shipped(self):
        for name in ("mtm", "psm"):
            validate_coupling(load_shipped_model(name))

    def test_shipped_path_rejects_unknown(self):
        with pytest.raises(ValueError):
            shipped_model_path("prm")


class TestParsingAndValidation:
    def test_minimal_roundtrip(self, tmp_path):
        model = model_from_dict(minimal_dict())
        path = tmp_path / "mini.model"
        save_model(model, path)
        again = load_model(path)
        assert again.name == model.name
        np.testing.assert_allclose(again.E, model.E)
        np.testing.assert_allclose(again.kin_a, model.kin_a)

    def test_degree_strings_parse(self):
        model = model_from_dict(minimal_dict())
        k = model.joint_index["2"]
        assert model.kin_alpha[k] == pytest.approx(-np.pi / 2)

    def test_duplicate_joint_name_rejected(self):
        raw = minimal_dict()
        raw["joints"][1]["name"] = "1"
        with pytest.raises(ModelValidationError):
            model_from_dict(raw)

    def test_unknown_predecessor_rejected(self):
        raw = minimal_dict()
        raw["joints"][1]["predecessor"] = "nope"
        with pytest.raises(ModelValidationError):
            model_from_dict(raw)

    def test_bad_schema_rejected(self):
        with pytest.raises((ModelParseError, ModelValidationError)):
            model_from_dict(minimal_dict(schema=99))

    def test_singular_coupling_rejected(self):
        raw = minimal_dict()
        raw["joints"][1]["coordinate"] = {"qd1": 1.0}  # duplicates row 1
        with pytest.raises(ModelValidationError):
            model_from_dict(raw)

    def test_gravity_must_be_three_vector(self):
        with pytest.raises(ModelValidationError):
            model_from_dict(minimal_dict(gravity=[0.0, -9.81]))

    def test_missing_hull_rejected(self):
        raw = minimal_dict()
        del raw["com_hulls"]
        with pytest.raises(ModelValidationError):
            model_from_dict(raw)

    def test_malformed_file_raises_parse_error(self, tmp_path):
        path = tmp_path / "broken.model"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ModelParseError):
            load_model(path)


class TestLimitsAndHulls:
    def test_basis_limits_cover_all_basis_joints(self):
        model = load_shipped_model("mtm")
        limits = model.basis_limits()
        assert set(limits) == set(model.coupling.basis)
        for lim in limits.values():
            assert lim.q_min < lim.q_max
            assert lim.dq_min < lim.dq_max

    def test_limit_rows_include_derived_band(self):
        model = load_shipped_model("mtm")
        names = [lr.name for lr in model.limit_rows()]
        assert "3p" in names

    def test_hull_default_fallback(self):
        model = model_from_dict(minimal_dict())
        box = model.com_hull("1")
        np.testing.assert_allclose(box.lower, [-0.3, -0.3, -0.3])

    def test_shipped_hulls_contain_origin_margin(self):
        for name in ("mtm", "psm"):
            model = load_shipped_model(name)
            for joint in model.joints:
                if not joint.link_inertia:
                    continue
                box = model.com_hull(joint.name)
                assert np.all(box.lower < box.upper)

    def test_workspace_boxes_exist(self):
        for name in ("mtm", "psm"):
            model = load_shipped_model(name)
            assert model.workspace_box("1") is not None


class TestSerializationStability:
    def test_save_is_deterministic(self, tmp_path):
        model = load_shipped_model("psm")
        p1, p2 = tmp_path / "a.model", tmp_path / "b.model"
        save_model(model, p1)
        save_model(model, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_shipped_files_are_valid_json(self):
        for name in ("mtm", "psm"):
            with open(shipped_model_path(name), encoding="utf-8") as fh:
                raw = json.load(fh)
            assert raw["schema"] == 1
