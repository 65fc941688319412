import json

import numpy as np
import pytest
import torch

from baple.artifacts import (
    FORMAT_VERSION,
    HEADER_NAME,
    load_artifact,
    load_payload,
    save_artifact,
    save_payload,
)
from baple.attack import AttackResult
from baple.data import DatasetSpec, generate_synthetic_dataset
from baple.errors import ArtifactFormatError
from baple.model import PromptState
from baple.poison import PoisonPlan
from baple.triggers import NoiseState


def test_dataset_roundtrip(tmp_path):
    ds = generate_synthetic_dataset(DatasetSpec(num_classes=3,
                                                samples_per_class=5, seed=1))
    save_artifact(ds, tmp_path / "ds")
    back = load_artifact(tmp_path / "ds")
    assert np.array_equal(back.images, ds.images)
    assert np.array_equal(back.labels, ds.labels)
    assert back.class_names == ds.class_names
    assert back.split == ds.split


def test_zero_noise_roundtrip(tmp_path):
    state = NoiseState.zeros((8, 8, 3), 8 / 255)
    save_artifact(state, tmp_path / "n")
    back = load_artifact(tmp_path / "n")
    assert back.epsilon == 8 / 255
    assert (back.delta == 0).all()
    assert back.delta.dtype == np.float32


def test_prompt_state_roundtrip(tmp_path):
    prompt = PromptState.random(4, 8, 0.02, seed=3)
    save_artifact(prompt, tmp_path / "p")
    back = load_artifact(tmp_path / "p")
    assert torch.equal(back.embeddings, prompt.embeddings.detach())


def test_poison_plan_roundtrip(tmp_path):
    plan = PoisonPlan(np.arange(10), np.array([12, 15]), target_class=2,
                      poison_ratio=0.1, seed=4, warnings=["w1"])
    save_artifact(plan, tmp_path / "plan")
    back = load_artifact(tmp_path / "plan")
    assert np.array_equal(back.clean_indices, plan.clean_indices)
    assert np.array_equal(back.poison_indices, plan.poison_indices)
    assert (back.target_class, back.poison_ratio, back.seed) == (2, 0.1, 4)
    assert back.warnings == ["w1"]


def test_encoder_roundtrip(tmp_path, small_encoder):
    save_artifact(small_encoder, tmp_path / "enc")
    back = load_artifact(tmp_path / "enc")
    assert back.checksum() == small_encoder.checksum()
    assert back.frozen
    assert back.class_names == small_encoder.class_names
    assert back.pretrain_accuracy == small_encoder.pretrain_accuracy


def test_attack_result_roundtrip(tmp_path):
    result = AttackResult(
        prompt=PromptState.random(2, 4, 0.02, seed=0),
        noise=NoiseState(np.full((4, 4, 3), 0.01, np.float32), 8 / 255),
        trace=np.arange(6, dtype=np.float64).reshape(2, 3),
        wall_seconds=1.5, config={"epochs": 2}, mode="baple",
        checksum_before="aa", checksum_after="aa")
    save_artifact(result, tmp_path / "res")
    back = load_artifact(tmp_path / "res")
    assert torch.equal(back.prompt.embeddings,
                       result.prompt.embeddings.detach())
    assert np.array_equal(back.noise.delta, result.noise.delta)
    assert back.noise.epsilon == result.noise.epsilon
    assert np.array_equal(back.trace, result.trace)
    assert back.mode == "baple" and back.config == {"epochs": 2}
    assert back.checksum_before == back.checksum_after == "aa"


def test_truncated_array_rejected(tmp_path):
    save_payload(tmp_path / "a", "Raw", {}, {"x": np.ones(16, np.float32)}, {})
    binfile = tmp_path / "a" / "x.bin"
    binfile.write_bytes(binfile.read_bytes()[:-4])
    with pytest.raises(ArtifactFormatError, match="truncated"):
        load_payload(tmp_path / "a")


def test_version_mismatch_rejected(tmp_path):
    save_payload(tmp_path / "a", "Raw", {}, {}, {})
    header_path = tmp_path / "a" / HEADER_NAME
    header = json.loads(header_path.read_text())
    header["version"] = FORMAT_VERSION + 1
    header_path.write_text(json.dumps(header))
    with pytest.raises(ArtifactFormatError) as exc:
        load_payload(tmp_path / "a")
    assert str(FORMAT_VERSION) in str(exc.value)
    assert str(FORMAT_VERSION + 1) in str(exc.value)


def test_missing_header(tmp_path):
    with pytest.raises(ArtifactFormatError, match=HEADER_NAME):
        load_payload(tmp_path)


def test_corrupt_header(tmp_path):
    (tmp_path / HEADER_NAME).write_text("{not json")
    with pytest.raises(ArtifactFormatError, match="corrupt"):
        load_payload(tmp_path)


def test_unknown_kind(tmp_path):
    save_payload(tmp_path / "a", "NoSuchKind", {}, {}, {})
    with pytest.raises(ArtifactFormatError, match="NoSuchKind"):
        load_artifact(tmp_path / "a")


def test_unregistered_type(tmp_path):
    with pytest.raises(ArtifactFormatError, match="not registered"):
        save_artifact(object(), tmp_path / "a")


def test_text_line_count_checked(tmp_path):
    save_payload(tmp_path / "a", "Raw", {}, {}, {"names": ["x", "y"]})
    (tmp_path / "a" / "names.txt").write_text("x\n")
    with pytest.raises(ArtifactFormatError, match="names"):
        load_payload(tmp_path / "a")
