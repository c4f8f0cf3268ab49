"""HTTP inference service.

Endpoints:
    GET  /api/health    -> {status, model_version, classes_supported}
    POST /api/predict   -> prediction payload (multipart field "image",
                           form field "classes" in {2,3})
    GET  /               -> static web UI bundle (when one is provided)

Error codes are machine-readable: 400 bad_image / bad_class_count,
413 too_large, 422 class_count_unavailable, 500 internal_error with an
opaque id.  The service holds frozen models only: identical request bytes
produce identical response bytes.

PNG/JPEG/BMP/PPM decoding happens here (Pillow), keeping codecs out of the
numeric core.
"""

from __future__ import annotations

import io
import logging
import uuid
from email.parser import BytesParser
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import HTMLResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from .imageio import Image
from .inference import predict_single
from .weights import file_crc, load_weights

logger = logging.getLogger(__name__)

MAX_UPLOAD_BYTES = 10 * 1024 * 1024

_PLACEHOLDER_PAGE = """<!doctype html>
<html><head><title>dermoscan</title></head>
<body><h1>dermoscan inference service</h1>
<p>No web UI bundle is installed. The JSON API is live at
<code>/api/health</code> and <code>/api/predict</code>; build the frontend
and pass its dist directory via <code>--ui</code> to serve it here.</p>
</body></html>
"""


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"code": code, "message": message})


def parse_multipart(content_type: str, body: bytes) -> dict:
    """Minimal multipart/form-data parser on the stdlib email machinery.
    Returns field name -> raw bytes."""
    if not content_type or "multipart/form-data" not in content_type:
        raise ValueError("expected multipart/form-data")
    header = (f"Content-Type: {content_type}\r\nMIME-Version: 1.0\r\n\r\n"
              .encode("utf-8"))
    msg = BytesParser().parsebytes(header + body)
    if not msg.is_multipart():
        raise ValueError("malformed multipart body")
    fields = {}
    for part in msg.get_payload():
        name = part.get_param("name", header="content-disposition")
        if name:
            payload = part.get_payload(decode=True)
            fields[name] = payload if payload is not None else b""
    return fields


def decode_upload(data: bytes) -> Image:
    """Decode PNG/JPEG/BMP/PPM bytes into an RGB Image."""
    from PIL import Image as PILImage
    with PILImage.open(io.BytesIO(data)) as im:
        rgb = im.convert("RGB")
        arr = np.asarray(rgb, dtype=np.uint8)
    return Image(arr)


def create_app(seg_weights, cls_weights=(), ui_dir=None,
               max_upload: int = MAX_UPLOAD_BYTES) -> FastAPI:
    """Build the service around frozen weight files.

    ``cls_weights`` is any number of recognition weight files; each is
    served for its own class count, so a binary and a 3-class model can be
    loaded side by side.
    """
    seg_net = load_weights(seg_weights)
    seg_net.set_mode("eval")
    cls_nets = {}
    for path in cls_weights:
        net = load_weights(path)
        net.set_mode("eval")
        cls_nets[net.config.num_classes] = net
    model_version = file_crc(seg_weights)

    app = FastAPI(title="dermoscan", docs_url=None, redoc_url=None)

    @app.exception_handler(Exception)
    async def internal_error(_request: Request, exc: Exception):
        fault = uuid.uuid4().hex
        logger.error("internal fault %s: %r", fault, exc)
        return JSONResponse(status_code=500,
                            content={"code": "internal_error", "id": fault})

    @app.get("/api/health")
    def health():
        return {"status": "ok", "model_version": model_version,
                "classes_supported": sorted(cls_nets)}

    @app.post("/api/predict")
    async def predict(request: Request):
        declared = request.headers.get("content-length")
        if declared and declared.isdigit() and int(declared) > max_upload:
            return _error(413, "too_large",
                          f"request exceeds {max_upload} bytes")
        body = await request.body()
        if len(body) > max_upload:
            return _error(413, "too_large",
                          f"request exceeds {max_upload} bytes")
        try:
            fields = parse_multipart(request.headers.get("content-type"), body)
        except ValueError as exc:
            return _error(400, "bad_request", str(exc))

        classes_raw = fields.get("classes", b"").decode("utf-8", "replace").strip()
        if classes_raw not in ("2", "3"):
            return _error(400, "bad_class_count",
                          f"classes must be 2 or 3, got {classes_raw!r}")
        classes = int(classes_raw)
        if classes not in cls_nets:
            return _error(422, "class_count_unavailable",
                          f"no {classes}-class weights loaded "
                          f"(have {sorted(cls_nets)})")
        image_bytes = fields.get("image")
        if not image_bytes:
            return _error(400, "bad_image", "missing multipart field 'image'")
        try:
            image = decode_upload(image_bytes)
        except Exception:
            return _error(400, "bad_image", "could not decode image "
                          "(png, jpg, bmp, jpeg, ppm)")

        payload = predict_single(seg_net, cls_nets[classes], image)
        payload["model_version"] = model_version
        return JSONResponse(content=payload)

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True),
                  name="ui")
    else:
        @app.get("/")
        def placeholder():
            return HTMLResponse(_PLACEHOLDER_PAGE)

    return app
