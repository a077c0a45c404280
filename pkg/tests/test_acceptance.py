"""Acceptance criteria 1-10.

Every test records one PASS/FAIL line (printed immediately and again in
the terminal summary). Criterion 10's spectral count is a known miss and
is marked as a strict expected failure; see the decisions ledger.
"""

import contextlib
import json
import time
from pathlib import Path

import numpy as np
import pytest

import oracles
import tables
from ffpnet import ops
from ffpnet.attention import TABLE5_PYRAMIDS, AdaptiveASPP, RePyAtt
from ffpnet.config import parse_config
from ffpnet.data import d4_apply, d4_invert, normalize_band_mean, normalize_global, sample_per_class, synth_dataset
from ffpnet.losses import LossConfig, ba_loss, cross_entropy
from ffpnet.metrics import erode_boundary_mask, overall_metrics, per_class_metrics
from ffpnet.networks import HeavyFFPNet, LightSpatialFFP, NetworkConfig, SpectralFFP
from ffpnet.runner import build_model, evaluate, load_task_data, run_eval, run_train
from ffpnet.tensor import Tensor, no_grad
from ffpnet.verify import run_suite

RESULTS: list[str] = []


@contextlib.contextmanager
def criterion(label: str, detail: str = ""):
    """Record PASS/FAIL for ``label``; ``detail`` may be filled in later
    through the yielded dict."""
    info = {"detail": detail}
    try:
        yield info
    except BaseException:
        line = f"criterion {label}: FAIL {info['detail']}".rstrip()
        RESULTS.append(line)
        print(line)
        raise
    line = f"criterion {label}: PASS {info['detail']}".rstrip()
    RESULTS.append(line)
    print(line)


def _config(data_dir: Path, **overrides):
    values = json.loads((data_dir / "config.json").read_text())
    for key, value in overrides.items():
        if isinstance(value, dict):
            values.setdefault(key, {}).update(value)
        else:
            values[key] = value
    return parse_config(values, data_dir)


# ----------------------------------------------------------------- 1


def test_criterion_1_gradient_correctness():
    with criterion("1 (gradcheck: ops/modules <= 1e-5, networks <= 1e-4, < 2 min)") as info:
        start = time.perf_counter()
        ok, rows = run_suite(report=lambda line: None)
        elapsed = time.perf_counter() - start
        worst = max(rows, key=lambda r: r[1] / r[2])
        info["detail"] = f"{len(rows)} checks, worst {worst[0]} {worst[1]:.2e}, {elapsed:.0f}s"
        assert ok, [r for r in rows if r[1] > r[2]]
        assert elapsed < 120


# ----------------------------------------------------------------- 2


def test_criterion_2_oracle_equivalence():
    with criterion("2 (loop oracles, 100 cases each; repyatt on 8x8 for every ablation pyramid)") as info:
        worst = {name: oracles.sweep(name, seed=100 + i) for i, name in enumerate(oracles.SWEEPS)}
        rng = np.random.default_rng(5)
        for pyramid in TABLE5_PYRAMIDS:
            m = RePyAtt(3, pyramid, rng=rng).to(np.float64)
            x = rng.normal(size=(2, 3, 8, 8))
            worst[f"repyatt{list(pyramid)}"] = float(np.abs(m(Tensor(x)).data - oracles.repyatt(x, m)).max())
        info["detail"] = f"max abs diff {max(worst.values()):.1e}"
        assert all(v <= 1e-5 for v in worst.values()), worst


# ----------------------------------------------------------------- 3


def test_criterion_3_sampling_tables():
    with criterion("3 (IP and UP per-class sample counts reproduced exactly)") as info:
        totals = {}
        for name, table, expected in (("IP", tables.IP, tables.IP_TOTALS), ("UP", tables.UP, tables.UP_TOTALS)):
            for j, t in enumerate(tables.THRESHOLDS):
                got = [sample_per_class(row[1], t) for row in table]
                assert got == [row[2 + j] for row in table], (name, t)
                totals[(name, t)] = sum(got)
                assert sum(got) == expected[1 + j]
        info["detail"] = "IP " + "/".join(str(totals[("IP", t)]) for t in tables.THRESHOLDS) + \
            ", UP " + "/".join(str(totals[("UP", t)]) for t in tables.THRESHOLDS)


# ----------------------------------------------------------------- 4


def test_criterion_4_metric_oracles():
    with criterion("4 (metrics vs brute force on 200 matrices to 1e-12; hand case)") as info:
        rng = np.random.default_rng(4)
        worst = 0.0
        for _ in range(200):
            k = int(rng.integers(2, 10))
            cm = rng.integers(0, 40, size=(k, k)) * (rng.random((k, k)) < 0.7)
            cm[0, 0] += 1
            ref = oracles.confusion_metrics(cm)
            got = {**overall_metrics(cm), **per_class_metrics(cm)}
            worst = max(worst, *(abs(got[key] - ref[key]) for key in ref))
        assert worst <= 1e-12
        hand = np.array([[3, 1], [0, 4]])
        o, pc = overall_metrics(hand), per_class_metrics(hand)
        assert abs(o["oa"] - 0.875) <= 1e-12 and abs(o["kappa"] - 0.75) <= 1e-12 and abs(pc["miou"] - 0.775) <= 1e-12
        info["detail"] = f"worst diff {worst:.1e}; hand case OA {o['oa']}, Kappa {o['kappa']:.4f}, mIoU {pc['miou']:.4f}"


# ----------------------------------------------------------------- 5


def test_criterion_5_synthetic_classification(tmp_path):
    with criterion("5 (synthetic hypercube, d=9, T=50, Adam 1e-3, 50 epochs: test OA >= 0.95, < 5 min)") as info:
        synth_dataset("hyper", 0, tmp_path / "data")
        cfg = _config(tmp_path / "data", patch_size=9, threshold=50, epochs=50, eval_every=0,
                      optimizer={"kind": "adam", "lr": 1e-3})
        start = time.perf_counter()
        run_train(cfg, tmp_path / "ckpt")
        record = run_eval(cfg, tmp_path / "ckpt", tmp_path / "eval")
        elapsed = time.perf_counter() - start
        info["detail"] = f"test OA {record['oa']:.4f} over {record['valid_pixels']} pixels, {elapsed:.0f}s"
        assert record["oa"] >= 0.95
        assert elapsed < 300


# ----------------------------------------------------------------- 6


def test_criterion_6_memorization_and_ba_identity(tmp_path):
    with criterion("6 (desk heavy net memorizes a 64x64 sample in 200 SGD steps with BA loss; BA(beta=1) == CE bitwise)") as info:
        synth_dataset("seg", 0, tmp_path / "data")
        cfg = _config(tmp_path / "data", epochs=200, max_steps=200, batch_size=1, eval_every=0, erode=0,
                      optimizer={"kind": "sgd", "lr": 0.01, "momentum": 0.9, "weight_decay": 5e-4, "schedule": "poly"},
                      loss={"kind": "ba"})
        report = run_train(cfg, tmp_path / "ckpt")
        record = run_eval(cfg, tmp_path / "ckpt", tmp_path / "eval", erode=0)
        assert report["steps"] == 200
        data = load_task_data(cfg)
        model = build_model(cfg, data)
        sample = data.samples[0]
        with no_grad():
            logits = model(Tensor(sample.image[None]))
        labels = sample.labels[None]
        ba = ba_loss(logits, labels, LossConfig("ba", 2, 1.0)).data
        ce = cross_entropy(logits, labels).data
        info["detail"] = f"pixel accuracy {record['oa']:.4f} after {report['steps']} steps; BA(1) == CE: {ba.tobytes() == ce.tobytes()}"
        assert record["oa"] >= 0.99
        assert ba.tobytes() == ce.tobytes()


# ----------------------------------------------------------------- 7


def test_criterion_7_aspp_ablation_parity():
    with criterion("7 (plain ASPP wiring with gates off; gates change the output)") as info:
        rng = np.random.default_rng(7)
        plain = AdaptiveASPP(4, 5, 6, (6, 12, 18), gated=False, rng=rng).to(np.float64).eval()
        gated = AdaptiveASPP(4, 5, 6, (6, 12, 18), gated=True, rng=rng).to(np.float64).eval()
        x = Tensor(rng.normal(size=(1, 4, 9, 9)))
        with no_grad():
            # plain wiring: four branches plus the pooled branch, concatenated and projected
            xs = plain.branch_features(x)
            pooled = ops.resize(plain.pool_conv(ops.global_avg_pool(x)), 9, 9, "bilinear")
            manual = plain.project(ops.concat(xs + [pooled], axis=1)).data
            assert np.array_equal(plain(x).data, manual)
            # share every non-gate parameter, then compare
            gated.load_state_dict(plain.state_dict(), strict=False)
            same_params = all(np.array_equal(a, dict(gated.state_dict())[k]) for k, a in plain.state_dict().items())
            diff = float(np.abs(gated(x).data - plain(x).data).max())
        assert same_params and len(plain.gates) == 0 and len(gated.gates) == 12
        # the whole heavy net: adaptive vs plain logits differ on a fixed input
        from ffpnet.verify import tiny_heavy_config

        cfg_a = tiny_heavy_config()
        net_a = HeavyFFPNet(cfg_a, np.random.default_rng(0)).eval()
        cfg_p = tiny_heavy_config()
        cfg_p.aspp = "plain"
        net_p = HeavyFFPNet(cfg_p, np.random.default_rng(0)).eval()
        net_p.load_state_dict({k: v for k, v in net_a.state_dict().items() if k in dict(net_p.state_dict())})
        img = Tensor(np.random.default_rng(1).normal(size=(1, 3, 32, 32)).astype(np.float32))
        with no_grad():
            logits_diff = float(np.abs(net_a(img).data - net_p(img).data).max())
        info["detail"] = f"module output diff {diff:.3e}, network logit diff {logits_diff:.3e}"
        assert diff > 0 and logits_diff > 0


# ----------------------------------------------------------------- 8


def _files(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_8_determinism(tmp_path):
    with criterion("8 (repeated train/eval runs are bit-identical)") as info:
        synth_dataset("hyper", 3, tmp_path / "hyper", size=16, bands=4)
        synth_dataset("seg", 3, tmp_path / "seg", size=32)
        runs = {
            "classify": _config(tmp_path / "hyper", patch_size=5, threshold=20, epochs=2, batch_size=8, augment=True),
            "segment": _config(tmp_path / "seg", epochs=2, max_steps=2,
                               network={"fusion_width": 8, "region_pyramid": ["pixel", 2, 1]}),
        }
        compared = 0
        for task, cfg in runs.items():
            outs = []
            for rep in ("a", "b"):
                ckpt = tmp_path / f"{task}-{rep}"
                run_train(cfg, ckpt)
                run_eval(cfg, ckpt, ckpt / "eval")
                outs.append(_files(ckpt))
            assert outs[0].keys() == outs[1].keys()
            for name in outs[0]:
                assert outs[0][name] == outs[1][name], f"{task}: {name} differs"
            compared += len(outs[0])
        info["detail"] = f"{compared} files compared byte for byte"


# ----------------------------------------------------------------- 9


def test_criterion_9_data_pipeline_invariants():
    with criterion("9 (D4 identities, normalization idempotence, erosion vs brute force on 50 maps)") as info:
        rng = np.random.default_rng(9)
        x = rng.normal(size=(3, 7, 7))
        transforms = [(h, v, k) for h in (False, True) for v in (False, True) for k in range(4)]
        for t in transforms:
            assert np.array_equal(d4_invert(d4_apply(x, *t), *t), x)
        r = x
        for _ in range(4):
            r = d4_apply(r, False, False, 1)
        assert np.array_equal(r, x)
        assert np.array_equal(d4_apply(d4_apply(x, True, False, 0), True, False, 0), x)
        assert np.array_equal(d4_apply(x, True, True, 0), d4_apply(x, False, False, 2))
        cube = (rng.normal(2.0, 5.0, size=(6, 10, 10))).astype(np.float32)
        g = normalize_global(cube)
        b = normalize_band_mean(cube)
        idem = max(np.abs(normalize_global(g) - g).max(), np.abs(normalize_band_mean(b) - b).max())
        assert idem <= 1e-6
        for seed in range(50):
            m = np.random.default_rng(seed)
            labels = np.kron(m.integers(0, 4, size=(3, 3)), np.ones((4, 4), dtype=int))
            labels[m.random((12, 12)) < 0.05] = m.integers(0, 4)
            radius = seed % 4
            assert np.array_equal(erode_boundary_mask(labels, radius), oracles.chebyshev_erode(labels, radius)), seed
        info["detail"] = f"8 D4 inverses exact; idempotence error {idem:.1e}; 50/50 erosion maps equal"


# ----------------------------------------------------------------- 10

PARAM_TARGETS = {"heavy": 78.8e6, "light": 24.8e6, "spectral": 0.20e6}


def _full_width_counts() -> dict[str, int]:
    # counting convention: all trainable parameters, IP setting p = 200, d = 29, K = 16;
    # heavy net on 3-band input with 6 classes
    rng = np.random.default_rng(0)
    cls_cfg = NetworkConfig.spatial_spectral(200, 16, 29, full=True)
    return {
        "heavy": HeavyFFPNet(NetworkConfig.heavy(6, full=True), rng).num_parameters(),
        "light": LightSpatialFFP(cls_cfg, rng).num_parameters(),
        "spectral": SpectralFFP(cls_cfg, rng).num_parameters(),
    }


@pytest.fixture(scope="module")
def full_counts():
    return _full_width_counts()


@pytest.mark.slow
@pytest.mark.parametrize("name", ["heavy", "light"])
def test_criterion_10_full_width_parameter_counts(full_counts, name):
    count, target = full_counts[name], PARAM_TARGETS[name]
    with criterion(f"10 {name} (full-width params within 5% of {target / 1e6:.2f}M)") as info:
        info["detail"] = f"{count:,} ({(count - target) / target:+.1%})"
        assert abs(count - target) <= 0.05 * target


@pytest.mark.slow
@pytest.mark.xfail(
    strict=True,
    reason="spectral module count does not land within 5% of 0.20M under the counting convention used for "
    "the other two networks (see decisions ledger); recorded as a known miss rather than tuned",
)
def test_criterion_10_spectral_parameter_count(full_counts):
    count, target = full_counts["spectral"], PARAM_TARGETS["spectral"]
    with criterion(f"10 spectral (full-width params within 5% of {target / 1e6:.2f}M)") as info:
        info["detail"] = f"{count:,} ({(count - target) / target:+.1%}); expected failure, see ledger"
        assert abs(count - target) <= 0.05 * target
