"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines as they complete.  The training-based criteria share module-scoped
fixtures so the suite trains each network once.
"""

import io
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
from fastapi.testclient import TestClient

from dermoscan import layers as L
from dermoscan.augment import AugmentationSpec, rebalance
from dermoscan.data import split_by_id
from dermoscan.losses import EPSILON, PixelPair, combined_loss
from dermoscan.metrics import metrics_from_confusion, roc_auc, seg_confusion
from dermoscan.network import DermoNet, NetworkConfig
from dermoscan.rng import make_rng
from dermoscan.server import create_app
from dermoscan.synthetic import gen_synthetic
from dermoscan.tensor import Tensor, grad_check, mul, tsum
from dermoscan.train import (
    TrainConfig, cascade_pipeline, evaluate, prepare_recognition_samples,
    train,
)
from dermoscan.weights import WeightFormatError, load_weights, save_weights

from test_metrics import brute_force_rates, mann_whitney_auc
from test_weights import independent_reader


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"\n[ACCEPTANCE] {name}: FAIL")
        raise
    print(f"\n[ACCEPTANCE] {name}: PASS")


def small_recognition_config(num_classes):
    return NetworkConfig(input_hw_detection=(64, 64),
                         input_hw_recognition=(64, 64),
                         stage_channels=(4, 8, 16, 24, 32),
                         encoder1_stage_repeats=(1, 1, 1, 1),
                         encoder2_middle_repeats=1, num_classes=num_classes,
                         fcl_width=32, include_decoder=False)


MILD_AUG = AugmentationSpec(rotation_deg=20, shift_frac=0.05,
                            zoom_range=(0.9, 1.1), gamma_range=(0.85, 1.2),
                            log_correction=False, sigmoid_correction=False,
                            contrast_stretch=False)


@pytest.fixture(scope="module")
def overfit_run(tmp_path_factory):
    """Toy-config segmentation overfit on 8 synthetic images (criterion 5);
    reused by the serialization and service criteria."""
    samples = gen_synthetic(8, 2, seed=7, hw=(192, 256))
    net = DermoNet(NetworkConfig(num_classes=2))
    net.init_weights(3)
    cfg = TrainConfig(mode="segmentation", epochs=200, batch_size=4, seed=11,
                      learning_rate=1e-3, target_train_metric=0.93,
                      early_stop_patience=1000)
    t0 = time.time()
    state = train(net, samples, cfg, val_samples=samples)
    elapsed = time.time() - t0
    root = tmp_path_factory.mktemp("overfit")
    save_weights(net, root / "seg.ddwf")
    return {"net": net, "samples": samples, "state": state,
            "elapsed": elapsed, "dir": root}


class TestGradientCorrectness:
    def test_layers_and_end_to_end(self):
        with criterion("gradient correctness (layers <1e-4, e2e <1e-3, <5min)"):
            t0 = time.time()
            rng = np.random.default_rng(100)

            conv = L.Conv2D(3, 4, 3, stride=2)
            conv.init_params(make_rng(1))
            dwsc = L.DepthwiseSeparableConv2D(3, 4, 3)
            dwsc.init_params(make_rng(2))
            bn_eval = L.BatchNorm2D(3)
            bn_eval.running_mean.data[...] = rng.normal(size=3)
            bn_eval.running_var.data[...] = rng.uniform(0.5, 2, size=3)
            bn_train = L.BatchNorm2D(3)
            bn_train.mode = "train"
            dense = L.Dense(12, 5)
            dense.init_params(make_rng(3))
            cases = [
                ("conv2d", conv, (2, 8, 8, 3)),
                ("dwsc", dwsc, (2, 7, 7, 3)),
                ("batchnorm_eval", bn_eval, (2, 5, 5, 3)),
                ("batchnorm_train", bn_train, (2, 5, 5, 3)),
                ("maxpool", L.maxpool2d, (2, 6, 6, 3)),
                ("upsample", L.upsample_nn, (1, 4, 4, 3)),
                ("gap", L.global_avg_pool, (2, 6, 6, 3)),
                ("dense", dense, (4, 12)),
            ]
            for name, layer, shape in cases:
                x = Tensor(rng.uniform(-2, 2, size=shape), requires_grad=True)
                w = Tensor(rng.normal(size=layer(x).shape))
                rep = grad_check(lambda t: tsum(mul(layer(t), w)), x,
                                 step=1e-5, tol=1e-4)
                assert rep.passed, f"{name}: {rep}"
                if hasattr(layer, "params"):
                    for pname, p in layer.params():
                        rep = grad_check(lambda _: tsum(mul(layer(x), w)), p,
                                         step=1e-5, tol=1e-4,
                                         max_entries=25, rng=0)
                        assert rep.passed, f"{name}.{pname}: {rep}"

            # end-to-end micro network at 1x32x32x3
            net = DermoNet(NetworkConfig(
                input_hw_detection=(32, 32), input_hw_recognition=(32, 32),
                stage_channels=(2, 3, 4, 5, 6),
                encoder1_stage_repeats=(1, 1, 1, 1),
                encoder2_middle_repeats=1, num_classes=2, fcl_width=8))
            net.init_weights(11)
            net.set_mode("eval")
            x = Tensor(rng.normal(size=(1, 32, 32, 3)))
            w_mask = Tensor(rng.normal(size=(1, 32, 32, 1)))

            def f(t):
                mask, probs = net.forward(t)
                return tsum(mul(mask, w_mask)) + tsum(mul(probs, probs))

            rep = grad_check(f, x, step=1e-5, tol=1e-3, max_entries=48, rng=1)
            assert rep.passed, f"e2e input: {rep}"
            for pname in ("encoder1.stem.kernel", "decoder.out_conv.kernel",
                          "head3.fc2.weight"):
                p = net.named_params()[pname]
                rep = grad_check(lambda _: f(x), p, step=1e-5, tol=1e-3,
                                 max_entries=20, rng=2)
                assert rep.passed, f"e2e {pname}: {rep}"

            elapsed = time.time() - t0
            assert elapsed < 300, f"gradient block took {elapsed:.0f}s"


class TestLossOracle:
    def test_combined_loss_matches_scalar_arithmetic(self):
        with criterion("loss oracle (hand case + 200 random, <1e-9)"):
            got = combined_loss(PixelPair(Tensor([1.0, 0.0]),
                                          Tensor([0.5, 0.5]))).item()
            expect = (1.0 - 0.5 / 1.5) + math.log(2.0)
            assert abs(got - expect) < 1e-9
            assert abs(got - 1.35981) < 1e-5

            rng = np.random.default_rng(2024)
            for _ in range(200):
                y = rng.integers(0, 2, size=8).astype(np.float64)
                if y.sum() == 0:
                    y[0] = 1.0
                p = rng.uniform(0, 1, size=8)
                pc = np.clip(p, EPSILON, 1 - EPSILON)
                inter = float((y * pc).sum())
                soft_iou = inter / (y.sum() + pc.sum() - inter)
                bce = -float(np.mean(y * np.log(pc) + (1 - y) * np.log(1 - pc)))
                expect = (1.0 - soft_iou) + bce
                got = combined_loss(PixelPair(Tensor(y), Tensor(p))).item()
                assert abs(got - expect) < 1e-9


class TestMetricOracles:
    def test_seg_auc_and_published_rates(self):
        with criterion("metric oracles (seg exact x500, AUC==MW <1e-9 x500, "
                       "published confusion rates)"):
            rng = np.random.default_rng(555)
            for _ in range(500):
                h, w = rng.integers(2, 12, size=2)
                y = (rng.uniform(size=(h, w)) > rng.uniform(0.2, 0.8)).astype(float)
                p = rng.uniform(size=(h, w))
                c = seg_confusion(y, p)
                assert (c.recall, c.specificity, c.iou) == brute_force_rates(y, p)

            for _ in range(500):
                n = int(rng.integers(4, 50))
                truths = rng.integers(0, 2, size=n)
                if truths.sum() in (0, n):
                    truths[0], truths[1] = 0, 1
                scores = np.round(rng.uniform(size=n), 1)
                _, auc = roc_auc(scores, truths)
                assert abs(auc - mann_whitney_auc(scores, truths)) < 1e-9

            m = metrics_from_confusion([[273, 4], [31, 71]])
            assert m.recall[1] == 71 / 75       # 94.67 % melanoma recall
            assert m.recall[0] == 273 / 304     # 89.80 % nevus recall
            assert round(100 * m.recall[1], 2) == 94.67
            assert round(100 * m.recall[0], 2) == 89.80


class TestDwscIdentity:
    def test_parameter_ratio_sweep(self):
        with criterion("DwSC parameter ratio == 1/N + 1/K^2 (exact sweep)"):
            from fractions import Fraction
            for k in (1, 3, 5):
                for n in range(1, 65):
                    for cin in (1, 3, 16):
                        layer = L.DepthwiseSeparableConv2D(cin, n, k)
                        ratio = Fraction(layer.param_count - n, k * k * cin * n)
                        assert ratio == Fraction(1, n) + Fraction(1, k * k)


class TestOverfitSegmentation:
    def test_toy_overfit(self, overfit_run):
        with criterion("segmentation overfit (8 images, <=200 epochs, "
                       "train mIoU>0.90, <15min)"):
            state = overfit_run["state"]
            assert state.epochs_run <= 200
            assert overfit_run["elapsed"] < 900, overfit_run["elapsed"]
            train_curve = state.curve("train")
            assert train_curve[-1]["metric"] > 0.90
            report = evaluate(overfit_run["net"], overfit_run["samples"],
                              "segmentation")
            assert report.seg.miou > 0.90, report.seg.miou


class TestRecognitionLearnability:
    def test_cascade_with_oracle_masks(self, tmp_path):
        with criterion("recognition learnability (200 samples, <=100 epochs, "
                       "acc>0.85, macro AUC>0.90, <30min)"):
            t0 = time.time()
            samples = gen_synthetic(200, 3, seed=123, hw=(64, 64))
            cfg = small_recognition_config(num_classes=3)
            net = DermoNet(cfg)
            net.init_weights(7)
            crops, _ = prepare_recognition_samples(samples, None,
                                                   cfg.input_hw_recognition)
            train_crops, held_crops = split_by_id(crops)
            tc = TrainConfig(mode="recognition", epochs=100, batch_size=8,
                             seed=11, learning_rate=1e-3,
                             augment_spec=MILD_AUG, early_stop_patience=15)
            state = train(net, train_crops, tc, val_samples=held_crops,
                          out_dir=tmp_path)
            assert state.epochs_run <= 100
            best = load_weights(tmp_path / "best.ddwf")
            held_ids = set(c.id for c in held_crops)
            held_full = [s for s in samples if s.id in held_ids]
            report = cascade_pipeline(None, best, held_full)
            elapsed = time.time() - t0
            assert report.cls.accuracy > 0.85, report.cls.accuracy
            assert report.auc["macro"] > 0.90, report.auc["macro"]
            assert elapsed < 1800, elapsed


class TestDirectionalRebalancing:
    @staticmethod
    def _minority_recall(train_samples, held, seed, p2):
        cfg = small_recognition_config(num_classes=2)
        net = DermoNet(cfg)
        net.init_weights(seed)
        crops, _ = prepare_recognition_samples(train_samples, None, (64, 64))
        aug = None
        if p2:
            labels = [c.label for c in crops]
            top = max(labels.count(0), labels.count(1))
            crops = rebalance(crops, {0: top, 1: top}, MILD_AUG, seed=seed)
            aug = MILD_AUG
        tc = TrainConfig(mode="recognition", epochs=15, batch_size=8,
                         seed=seed, learning_rate=1e-3,
                         class_weight_mode="uniform", augment_spec=aug,
                         early_stop_patience=100)
        train(net, crops, tc)
        return cascade_pipeline(None, net, held).cls.recall[1]

    def test_p2_beats_p1_on_minority_recall(self):
        with criterion("directional claim: P2 minority recall >= P1 "
                       "(4.2:1 imbalance, 3 seeds)"):
            for seed in (1, 2, 3):
                tr = gen_synthetic(52, 2, seed=500 + seed, hw=(64, 64),
                                   class_counts=[42, 10])
                held = gen_synthetic(26, 2, seed=900 + seed, hw=(64, 64),
                                     class_counts=[21, 5])
                r1 = self._minority_recall(tr, held, seed, p2=False)
                r2 = self._minority_recall(tr, held, seed, p2=True)
                print(f"  seed {seed}: P1 {r1:.3f}  P2 {r2:.3f}")
                assert r2 >= r1, f"seed {seed}: P2 {r2} < P1 {r1}"


class TestSerialization:
    def test_round_trip_truncation_and_independent_reader(self, overfit_run,
                                                          tmp_path):
        with criterion("serialization (round-trip drift <1e-5, truncation "
                       "rejected, independent reader)"):
            net = overfit_run["net"]
            samples = overfit_run["samples"]
            before = evaluate(net, samples, "segmentation").seg
            path = tmp_path / "rt.ddwf"
            save_weights(net, path)
            loaded = load_weights(path)
            after = evaluate(loaded, samples, "segmentation").seg
            for field in ("mrc", "msp", "miou"):
                drift = abs(getattr(before, field) - getattr(after, field))
                assert drift < 1e-5, f"{field} drift {drift}"

            data = path.read_bytes()
            (tmp_path / "cut.ddwf").write_bytes(data[:-9])
            with pytest.raises(WeightFormatError):
                load_weights(tmp_path / "cut.ddwf")

            config_text, tensors = independent_reader(path)
            assert NetworkConfig.from_config_lines(config_text) == net.config
            ours = net.named_tensors()
            assert set(tensors) == set(ours)
            for name, arr in tensors.items():
                assert np.array_equal(arr, ours[name].data.astype(np.float32))


class TestServiceContract:
    def test_http_contract_against_trained_weights(self, overfit_run,
                                                   tmp_path, monkeypatch):
        with criterion("service contract (health, predict, 400/413/422/500, "
                       "deterministic bytes)"):
            from PIL import Image as PILImage

            cls_cfg = small_recognition_config(num_classes=2)
            cls_net = DermoNet(cls_cfg)
            cls_net.init_weights(19)
            crops, _ = prepare_recognition_samples(
                gen_synthetic(24, 2, seed=321, hw=(64, 64)), None, (64, 64))
            tc = TrainConfig(mode="recognition", epochs=5, batch_size=8,
                             seed=2, learning_rate=1e-3)
            train(cls_net, crops, tc)
            save_weights(cls_net, tmp_path / "cls2.ddwf")

            seg_path = overfit_run["dir"] / "seg.ddwf"
            app = create_app(seg_path, [tmp_path / "cls2.ddwf"],
                             max_upload=200_000)
            client = TestClient(app, raise_server_exceptions=False)

            health = client.get("/api/health")
            assert health.status_code == 200
            assert health.json()["classes_supported"] == [2]

            sample = gen_synthetic(1, 2, seed=77, hw=(100, 120))[0]
            buf = io.BytesIO()
            PILImage.fromarray(sample.image.pixels).save(buf, format="PNG")
            png = buf.getvalue()

            def post(img_bytes, classes):
                return client.post(
                    "/api/predict",
                    files={"image": ("x.png", img_bytes, "image/png")},
                    data={"classes": classes})

            ok = post(png, "2")
            assert ok.status_code == 200
            body = ok.json()
            assert abs(sum(c["probability"] for c in body["classes"]) - 1) < 1e-6
            assert body["mask"]["dims"] == [100, 120]
            bbox = body["bbox"]
            assert bbox["x"] + bbox["w"] <= 120 and bbox["y"] + bbox["h"] <= 100

            assert post(png, "2").content == ok.content  # frozen model

            assert post(png, "4").status_code == 400
            assert post(png, "4").json()["code"] == "bad_class_count"
            big = post(b"z" * 300_000, "2")
            assert (big.status_code, big.json()["code"]) == (413, "too_large")
            missing = post(png, "3")
            assert (missing.status_code,
                    missing.json()["code"]) == (422, "class_count_unavailable")

            import dermoscan.server as server_mod
            monkeypatch.setattr(server_mod, "predict_single",
                                lambda *a, **k: (_ for _ in ()).throw(
                                    RuntimeError("boom")))
            err = post(png, "2")
            assert (err.status_code, err.json()["code"]) == (500, "internal_error")
