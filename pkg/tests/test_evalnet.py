"""Frozen evaluation classifier: training contract, persistence, hashing."""

import hashlib

import pytest
import torch

from ctx2im.checkpoint import CheckpointError, save_checkpoint
from ctx2im.evalnet import (
    EvalNet,
    evalnet_hash,
    load_evalnet,
    save_evalnet,
    train_evalnet,
)
from ctx2im.synth import SynthConfig

torch.manual_seed(0)


def test_evalnet_shapes_and_probabilities():
    with torch.random.fork_rng():
        torch.manual_seed(3)
        net = EvalNet(6)
    images = torch.randn(5, 3, 32, 32, generator=torch.Generator().manual_seed(1))
    assert net.features(images).shape == (5, 64)
    assert net(images).shape == (5, 6)
    probs = net.predict_probs(images)
    assert torch.allclose(probs.sum(dim=-1), torch.ones(5), atol=1e-6)
    assert (probs >= 0).all()


def test_train_evalnet_reaches_required_accuracy():
    net, acc = train_evalnet(SynthConfig(), seed=5, n_train=1500, n_val=200, epochs=6)
    assert acc >= 0.95  # the default gate; raises instead of returning below it
    assert isinstance(net, EvalNet)


def test_train_evalnet_is_deterministic():
    kw = dict(seed=5, n_train=64, n_val=16, epochs=1, min_accuracy=0.0)
    net1, acc1 = train_evalnet(SynthConfig(), **kw)
    net2, acc2 = train_evalnet(SynthConfig(), **kw)
    assert acc1 == acc2
    for (k1, t1), (k2, t2) in zip(net1.state_dict().items(), net2.state_dict().items()):
        assert k1 == k2
        assert torch.equal(t1, t2)


def test_train_evalnet_refuses_an_unconverged_model():
    with pytest.raises(RuntimeError, match="held-out accuracy"):
        train_evalnet(
            SynthConfig(), seed=5, n_train=64, n_val=16, epochs=1, min_accuracy=1.01
        )


def test_save_load_roundtrip_and_hash(tmp_path):
    net, acc = train_evalnet(
        SynthConfig(), seed=5, n_train=64, n_val=16, epochs=1, min_accuracy=0.0
    )
    path = tmp_path / "evalnet.ckpt"
    save_evalnet(path, net, acc)

    loaded, meta = load_evalnet(path)
    assert meta["kind"] == "evalnet"
    assert meta["n_classes"] == net.n_classes
    assert meta["accuracy"] == acc
    assert not loaded.training
    for (k1, t1), (k2, t2) in zip(net.state_dict().items(), loaded.state_dict().items()):
        assert k1 == k2
        assert torch.equal(t1, t2)

    # the recorded hash is exactly the checkpoint file digest
    assert evalnet_hash(path) == hashlib.sha256(path.read_bytes()).hexdigest()
    save_evalnet(path, net, acc)
    assert evalnet_hash(path) == hashlib.sha256(path.read_bytes()).hexdigest()


def test_load_evalnet_rejects_other_checkpoints(tmp_path):
    path = tmp_path / "other.ckpt"
    save_checkpoint(path, {"x": torch.zeros(1)}, {"kind": "train"})
    with pytest.raises(CheckpointError, match="not an evalnet checkpoint"):
        load_evalnet(path)
