import io
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from dermoscan.imageio import write_ppm
from dermoscan.network import DermoNet, NetworkConfig
from dermoscan.rle import rle_decode
from dermoscan.server import create_app, parse_multipart
from dermoscan.synthetic import gen_synthetic
from dermoscan.weights import file_crc, save_weights


def micro_cfg(**kw):
    base = dict(input_hw_detection=(32, 32), input_hw_recognition=(32, 32),
                stage_channels=(2, 3, 4, 5, 6),
                encoder1_stage_repeats=(1, 1, 1, 1),
                encoder2_middle_repeats=1, num_classes=2, fcl_width=8)
    base.update(kw)
    return NetworkConfig(**base)


@pytest.fixture(scope="module")
def weight_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("weights")
    seg = DermoNet(micro_cfg())
    seg.init_weights(1)
    save_weights(seg, root / "seg.ddwf")
    cls2 = DermoNet(micro_cfg(include_decoder=False, num_classes=2))
    cls2.init_weights(2)
    save_weights(cls2, root / "cls2.ddwf")
    cls3 = DermoNet(micro_cfg(include_decoder=False, num_classes=3))
    cls3.init_weights(3)
    save_weights(cls3, root / "cls3.ddwf")
    return root


@pytest.fixture(scope="module")
def client(weight_files):
    app = create_app(weight_files / "seg.ddwf",
                     [weight_files / "cls3.ddwf", weight_files / "cls2.ddwf"])
    return TestClient(app, raise_server_exceptions=False)


def png_bytes(seed=0, hw=(48, 40)):
    from PIL import Image as PILImage
    sample = gen_synthetic(1, 2, seed=seed, hw=hw)[0]
    buf = io.BytesIO()
    PILImage.fromarray(sample.image.pixels).save(buf, format="PNG")
    return buf.getvalue()


def post_predict(client, image_bytes, classes, filename="lesion.png"):
    return client.post("/api/predict",
                       files={"image": (filename, image_bytes, "image/png")},
                       data={"classes": classes})


class TestHealth:
    def test_health_reports_version_and_classes(self, client, weight_files):
        resp = client.get("/api/health")
        assert resp.status_code == 200
        body = resp.json()
        assert body["status"] == "ok"
        assert body["model_version"] == file_crc(weight_files / "seg.ddwf")
        assert body["classes_supported"] == [2, 3]


class TestPredict:
    def test_success_contract(self, client):
        resp = post_predict(client, png_bytes(), "2")
        assert resp.status_code == 200
        body = resp.json()
        probs = [c["probability"] for c in body["classes"]]
        assert abs(sum(probs) - 1.0) < 1e-6
        assert [c["label"] for c in body["classes"]] == ["Nev", "Mel"]
        h, w = body["mask"]["dims"]
        assert (h, w) == (48, 40)
        bbox = body["bbox"]
        assert 0 <= bbox["x"] and bbox["x"] + bbox["w"] <= w
        assert 0 <= bbox["y"] and bbox["y"] + bbox["h"] <= h
        assert sum(body["mask"]["rle"]) == h * w
        rle_decode(body["mask"]["rle"], h, w)
        assert "model_version" in body

    def test_three_class_path(self, client):
        resp = post_predict(client, png_bytes(seed=3), "3")
        assert resp.status_code == 200
        assert [c["label"] for c in resp.json()["classes"]] == ["Nev", "SK", "Mel"]

    def test_identical_request_identical_bytes(self, client):
        img = png_bytes(seed=5)
        a = post_predict(client, img, "2")
        b = post_predict(client, img, "2")
        assert a.content == b.content

    def test_bad_class_count(self, client):
        resp = post_predict(client, png_bytes(), "4")
        assert resp.status_code == 400
        assert resp.json()["code"] == "bad_class_count"

    def test_undecodable_image(self, client):
        resp = post_predict(client, b"not an image at all", "2")
        assert resp.status_code == 400
        assert resp.json()["code"] == "bad_image"

    def test_missing_image_field(self, client):
        resp = client.post("/api/predict", data={"classes": "2"},
                           files={"other": ("x.bin", b"123")})
        assert resp.status_code == 400
        assert resp.json()["code"] == "bad_image"

    def test_ppm_accepted_at_boundary(self, client, tmp_path):
        sample = gen_synthetic(1, 2, seed=9, hw=(32, 32))[0]
        write_ppm(sample.image, tmp_path / "x.ppm")
        resp = post_predict(client, (tmp_path / "x.ppm").read_bytes(), "2",
                            filename="x.ppm")
        assert resp.status_code == 200

    def test_payload_too_large(self, weight_files):
        app = create_app(weight_files / "seg.ddwf",
                         [weight_files / "cls2.ddwf"], max_upload=10_000)
        small_client = TestClient(app, raise_server_exceptions=False)
        resp = post_predict(small_client, b"x" * 20_000, "2")
        assert resp.status_code == 413
        assert resp.json()["code"] == "too_large"

    def test_unavailable_class_count(self, weight_files):
        app = create_app(weight_files / "seg.ddwf", [weight_files / "cls2.ddwf"])
        c = TestClient(app, raise_server_exceptions=False)
        resp = post_predict(c, png_bytes(), "3")
        assert resp.status_code == 422
        assert resp.json()["code"] == "class_count_unavailable"

    def test_internal_error_opaque(self, weight_files, monkeypatch):
        import dermoscan.server as server_mod
        app = create_app(weight_files / "seg.ddwf", [weight_files / "cls2.ddwf"])
        c = TestClient(app, raise_server_exceptions=False)

        def boom(*a, **k):
            raise RuntimeError("secret internals")

        monkeypatch.setattr(server_mod, "predict_single", boom)
        resp = post_predict(c, png_bytes(), "2")
        assert resp.status_code == 500
        body = resp.json()
        assert body["code"] == "internal_error"
        assert "secret" not in resp.text
        assert len(body["id"]) == 32


class TestStatic:
    def test_placeholder_page(self, client):
        resp = client.get("/")
        assert resp.status_code == 200
        assert "dermoscan" in resp.text

    def test_serves_ui_bundle(self, weight_files, tmp_path):
        ui = tmp_path / "dist"
        ui.mkdir()
        (ui / "index.html").write_text("<html><body>BUNDLE</body></html>")
        app = create_app(weight_files / "seg.ddwf",
                         [weight_files / "cls2.ddwf"], ui_dir=ui)
        c = TestClient(app)
        assert "BUNDLE" in c.get("/").text


class TestMultipartParser:
    def test_round_trip_fields(self):
        boundary = "xBOUNDARYx"
        body = (
            f"--{boundary}\r\n"
            'Content-Disposition: form-data; name="classes"\r\n\r\n'
            "3\r\n"
            f"--{boundary}\r\n"
            'Content-Disposition: form-data; name="image"; filename="a.png"\r\n'
            "Content-Type: application/octet-stream\r\n"
            "Content-Transfer-Encoding: base64\r\n\r\n"
            "AAEC\r\n"
            f"--{boundary}--\r\n"
        ).encode()
        fields = parse_multipart(f"multipart/form-data; boundary={boundary}", body)
        assert fields["classes"] == b"3"
        assert fields["image"] == bytes([0, 1, 2])

    def test_non_multipart_rejected(self):
        with pytest.raises(ValueError):
            parse_multipart("application/json", b"{}")
