import numpy as np
import pytest

from ffpnet.data import build_patch_dataset, synth_hyper
from ffpnet.errors import ConfigError, NumericalError, UsageError
from ffpnet.fileio import save_tensor_dir
from ffpnet.losses import LossConfig
from ffpnet.networks import BackboneConfig, NetworkConfig, SpatialSpectralFFPNet
from ffpnet.optim import Optimizer, OptimizerState
from ffpnet.runner import predict_patches, prepare_cube
from ffpnet.training import (
    PatchBatcher,
    SegBatcher,
    epoch_batches,
    load_checkpoint,
    load_pretrained,
    save_checkpoint,
    train_loop,
)
from ffpnet.verify import tiny_classifier_config


def _small_net(bands=4, classes=4, seed=0):
    backbone = BackboneConfig("vgg", (1, 1, 1, 1), (8, 8, 16, 16, 16), 8, (1, 1, 1, 1, 1), bands)
    cfg = NetworkConfig(backbone=backbone, fusion_width=8, num_classes=classes, patch_size=5, fc_width=32, feature_width=32)
    return SpatialSpectralFFPNet(cfg, np.random.default_rng(seed), np.random.default_rng(seed + 1))


def _patches(threshold=6, sigma=0.5):
    cube, _ = synth_hyper(0, size=16, bands=4, sigma=sigma)
    return build_patch_dataset(prepare_cube(cube, True), 5, threshold, np.random.default_rng(0))


def _run(seed=0, epochs=2, **kw):
    ds = _patches()
    net = _small_net(seed=seed)
    opt = Optimizer(net.parameters(), OptimizerState("adam", lr_base=1e-3))
    rep = train_loop(net, PatchBatcher(ds), opt, LossConfig(), epochs, 8, np.random.default_rng(seed), **kw)
    return net, opt, rep


def test_epoch_batches_cover_and_drop_singletons():
    rng = np.random.default_rng(0)
    b = epoch_batches(10, 4, rng)
    assert [len(x) for x in b] == [4, 4, 2]
    assert sorted(np.concatenate(b).tolist()) == list(range(10))
    assert [len(x) for x in epoch_batches(9, 4, rng)] == [4, 4]
    assert [len(x) for x in epoch_batches(1, 4, rng)] == [1]


def test_zero_epochs_only_initial_eval_and_params_untouched():
    ds = _patches()
    net = _small_net()
    before = {k: v.copy() for k, v in net.state_dict().items()}
    opt = Optimizer(net.parameters(), OptimizerState("adam"))
    rep = train_loop(net, PatchBatcher(ds), opt, LossConfig(), 0, 8, np.random.default_rng(0), evaluate=lambda: {"oa": 0.5})
    assert rep == {"initial": {"oa": 0.5}, "epochs": [], "steps": 0}
    for k, v in net.state_dict().items():
        np.testing.assert_array_equal(v, before[k])


def test_memorizes_24_patches():
    ds = _patches()
    assert len(ds.train) == 24
    net = _small_net()
    opt = Optimizer(net.parameters(), OptimizerState("adam", lr_base=1e-3))
    rep = train_loop(net, PatchBatcher(ds), opt, LossConfig(), 200, 24, np.random.default_rng(2))
    assert rep["steps"] == 200
    pred = predict_patches(net, ds, ds.train[:, 0], ds.train[:, 1])
    assert (pred == ds.train[:, 2]).all()


def test_same_seed_same_curve():
    _, _, a = _run(seed=3)
    _, _, b = _run(seed=3)
    assert [e["loss"] for e in a["epochs"]] == [e["loss"] for e in b["epochs"]]
    _, _, c = _run(seed=4)
    assert [e["loss"] for e in a["epochs"]] != [e["loss"] for e in c["epochs"]]


def test_max_steps_and_eval_cadence():
    calls = []
    _, _, rep = _run(epochs=5, evaluate=lambda: calls.append(1) or {}, eval_every=2, max_steps=7)
    assert rep["steps"] == 7
    assert [e["epoch"] for e in rep["epochs"]] == [1, 2, 3]
    assert ["eval" in e for e in rep["epochs"]] == [False, True, True]
    assert len(calls) == 3


def test_nan_loss_aborts():
    ds = _patches()
    net = _small_net()
    net.classifier.weight.data[0, 0] = np.nan
    opt = Optimizer(net.parameters(), OptimizerState("adam"))
    with pytest.raises(NumericalError, match="non-finite loss"):
        train_loop(net, PatchBatcher(ds), opt, LossConfig(), 1, 8, np.random.default_rng(0))


def test_empty_dataset_errors():
    ds = _patches()
    empty = PatchBatcher(ds)
    empty.rows = empty.rows[:0]
    with pytest.raises(UsageError):
        train_loop(_small_net(), empty, None, LossConfig(), 1, 8, np.random.default_rng(0))
    with pytest.raises(UsageError):
        SegBatcher([])


def test_augmented_batcher_keeps_labels():
    ds = _patches()
    plain = PatchBatcher(ds).batch(np.arange(5))
    aug = PatchBatcher(ds, augment_rng=np.random.default_rng(0)).batch(np.arange(5))
    np.testing.assert_array_equal(plain[1], aug[1])
    # D4 keeps the centre pixel fixed on odd patches
    np.testing.assert_array_equal(plain[0][:, :, 2, 2], aug[0][:, :, 2, 2])


def test_checkpoint_roundtrip(tmp_path):
    net, opt, rep = _run()
    save_checkpoint(tmp_path, net, opt, rep)
    assert (tmp_path / "manifest.txt").exists() and (tmp_path / "report.json").exists()
    assert any((tmp_path / "optimizer").iterdir()) and any((tmp_path / "params").iterdir())
    other = _small_net(seed=9)
    other_opt = Optimizer(other.parameters(), OptimizerState("adam"))
    loaded = load_checkpoint(tmp_path, other, other_opt)
    assert loaded["steps"] == rep["steps"]
    for (k, a), (_, b) in zip(net.state_dict().items(), other.state_dict().items()):
        np.testing.assert_array_equal(a, b, err_msg=k)
    assert other_opt.state.step_count == opt.state.step_count
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path, SpatialSpectralFFPNet(tiny_classifier_config(), np.random.default_rng(0)))


def test_pretrained_import_replicates_rgb_kernel(tmp_path):
    net = _small_net(bands=5)
    w3 = np.random.default_rng(0).normal(size=(8, 3, 3, 3)).astype(np.float32)
    manifest = []
    save_tensor_dir(tmp_path, {"spatial.backbone.convs.0.conv.weight": w3, "unrelated.weight": np.ones(2, np.float32)}, "p", manifest)
    (tmp_path / "manifest.txt").write_text("\n".join(manifest) + "\n")
    assert load_pretrained(net, tmp_path) == ["spatial.backbone.convs.0.conv.weight"]
    w = net.spatial.backbone.convs[0].conv.weight.data
    for i in range(5):
        np.testing.assert_array_equal(w[:, i], w3[:, i % 3])
