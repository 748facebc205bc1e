import copy
import json

import numpy as np
import pytest

from services.chain_registry import (
    BUILTIN_REGISTRY,
    RegistryError,
    get_chain,
    load_registry,
    parse_registry,
)
from services.kinematics import forward_kinematics
from utils.errors import NotFoundError


def test_builtin_chains_cover_four_arms_and_fixture():
    chains = load_registry()
    assert {"arm-A", "arm-B", "arm-C", "arm-D", "planar-2"} <= set(chains)
    for name in ("arm-A", "arm-B", "arm-C", "arm-D"):
        assert 5 <= chains[name].dof <= 8
        assert chains[name].kind == "arm"
    assert chains["planar-2"].kind == "fixture"


def test_home_pose_sits_above_the_table():
    chain = get_chain("arm-A")
    tip_world = chain.mount @ forward_kinematics(chain, chain.home).tip
    assert tip_world.translation[2] > 0.75


def test_unknown_chain_raises_not_found():
    with pytest.raises(NotFoundError):
        get_chain("arm-Z")


def test_arm_with_too_few_joints_rejected():
    data = copy.deepcopy(BUILTIN_REGISTRY)
    fixture = next(c for c in data["chains"] if c["name"] == "planar-2")
    fixture = dict(fixture, name="short-arm", kind="arm")
    with pytest.raises(RegistryError):
        parse_registry({"format_version": data["format_version"], "chains": [fixture]})


def test_bad_version_rejected():
    with pytest.raises(RegistryError):
        parse_registry({"format_version": 999, "chains": []})


def test_registry_file_overrides_by_name(tmp_path, monkeypatch):
    data = copy.deepcopy(BUILTIN_REGISTRY)
    fixture = next(c for c in data["chains"] if c["name"] == "planar-2")
    fixture["tip_xyz"] = [0.4, 0.0, 0.0]
    path = tmp_path / "chains.json"
    path.write_text(json.dumps({"format_version": data["format_version"], "chains": [fixture]}))

    overridden = get_chain("planar-2", path)
    tip = forward_kinematics(overridden, (0.0, 0.0)).tip
    np.testing.assert_allclose(tip.translation, [0.7, 0.0, 0.0], atol=1e-12)

    monkeypatch.setenv("XAUG_CHAIN_REGISTRY", str(path))
    assert np.allclose(forward_kinematics(get_chain("planar-2"), (0.0, 0.0)).tip.translation, [0.7, 0.0, 0.0])
    assert "arm-A" in load_registry()


def test_unreadable_registry_file(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(RegistryError):
        load_registry(path)
