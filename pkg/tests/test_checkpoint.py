import pytest
import torch

from model import build_denoiser, load_checkpoint, save_checkpoint
from model.checkpoint import FORMAT_VERSION
from model.errors import CheckpointError

from conftest import tiny


def test_checkpoint_round_trip(tmp_path) -> None:
    cfg = tiny(conditioning_encoder="zero_conv")
    state = build_denoiser(cfg, 24)
    with torch.no_grad():
        for parameter in state.trainable_parameters():
            parameter.add_(0.01)
    path = save_checkpoint(tmp_path / "ckpt" / "c.pt", state, cfg, step=12, text_dim=24)

    checkpoint = load_checkpoint(path)

    assert checkpoint.step == 12 and checkpoint.text_dim == 24
    assert checkpoint.config == cfg
    assert checkpoint.optimizer_state is None
    restored = checkpoint.state.state_dict()
    assert all(torch.equal(restored[name], value) for name, value in state.state_dict().items())
    assert all(p.requires_grad == checkpoint.state.is_trainable_name(n) for n, p in checkpoint.state.named_parameters())


def test_checkpoint_separates_frozen_and_trainable_weights(tmp_path) -> None:
    cfg = tiny()
    state = build_denoiser(cfg, 24)
    payload = torch.load(save_checkpoint(tmp_path / "c.pt", state, cfg, 0, 24), weights_only=True)

    assert payload["version"] == FORMAT_VERSION
    assert payload["ssm_conditioning"] and payload["denoiser"]
    assert all(state.is_trainable_name(name) for name in payload["ssm_conditioning"])
    assert not any(state.is_trainable_name(name) for name in payload["denoiser"])


def test_wrong_version_is_rejected(tmp_path) -> None:
    cfg = tiny()
    path = save_checkpoint(tmp_path / "c.pt", build_denoiser(cfg, 24), cfg, 0, 24)
    payload = torch.load(path, weights_only=True)
    payload["version"] = FORMAT_VERSION + 1
    torch.save(payload, path)

    with pytest.raises(CheckpointError, match="format version"):
        load_checkpoint(path)


def test_mismatched_weights_are_rejected(tmp_path) -> None:
    cfg = tiny()
    path = save_checkpoint(tmp_path / "c.pt", build_denoiser(cfg, 24), cfg, 0, 24)
    payload = torch.load(path, weights_only=True)
    payload["config"]["widths"] = [8, 8]
    torch.save(payload, path)

    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_missing_checkpoint(tmp_path) -> None:
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nothing.pt")
