"""Provider-over-wire escape hatch: a line-delimited JSON protocol with
base64 float32 buffers so an external process can serve predict_noise /
embed_image / embed_text. Lets a real diffusion or embedding model sit in a
sidecar process without changing the core.

Request (one JSON object per line):
    {"op": "predict_noise", "image_b64": ..., "shape": [h, w, 3],
     "prompt": "...", "t": 123}
    {"op": "embed_image", "image_b64": ..., "shape": [h, w, 3]}
    {"op": "embed_text", "prompt": "..."}
Response:
    {"ok": true, "data_b64": ..., "shape": [...]}
    {"ok": false, "error": "..."}
"""

import base64
import json
import subprocess

import numpy as np

from .errors import ConfigurationError, NumericFault
from .guidance import DenoiserProvider, EmbeddingProvider


def _encode(arr):
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    return {"data_b64": base64.b64encode(arr.tobytes()).decode("ascii"),
            "shape": list(arr.shape)}


def _decode(payload):
    raw = base64.b64decode(payload["data_b64"])
    return np.frombuffer(raw, dtype=np.float32).reshape(payload["shape"]).astype(np.float64)


class WireClient:
    """Line-delimited request/response over a (reader, writer) file pair or a
    spawned subprocess command."""

    def __init__(self, reader=None, writer=None, command=None):
        if command is not None:
            self._proc = subprocess.Popen(command, stdin=subprocess.PIPE,
                                          stdout=subprocess.PIPE, text=True)
            self._r, self._w = self._proc.stdout, self._proc.stdin
        else:
            self._proc = None
            self._r, self._w = reader, writer

    def call(self, request):
        self._w.write(json.dumps(request) + "\n")
        self._w.flush()
        line = self._r.readline()
        if not line:
            raise NumericFault("wire provider closed the stream")
        resp = json.loads(line)
        if not resp.get("ok"):
            raise ConfigurationError(f"wire provider error: {resp.get('error')}")
        return resp

    def close(self):
        if self._proc is not None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)


class WireDenoiser(DenoiserProvider):
    def __init__(self, client):
        self.client = client

    def predict_noise(self, noisy, prompt, t):
        req = {"op": "predict_noise", "prompt": prompt, "t": int(t)}
        req.update({"image_b64": _encode(noisy)["data_b64"],
                    "shape": list(np.asarray(noisy).shape)})
        return _decode(self.client.call(req))


class WireEmbedder(EmbeddingProvider):
    def __init__(self, client):
        self.client = client

    def embed_image(self, image):
        req = {"op": "embed_image", "image_b64": _encode(image)["data_b64"],
               "shape": list(np.asarray(image).shape)}
        return _decode(self.client.call(req))

    def embed_text(self, prompt):
        return _decode(self.client.call({"op": "embed_text", "prompt": prompt}))


def serve_providers(denoiser, embedder, reader, writer):
    """Serve requests from `reader` until EOF, answering on `writer`.

    Run this in the sidecar process around its real providers.
    """
    for line in reader:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
            op = req["op"]
            if op == "predict_noise":
                img = np.frombuffer(base64.b64decode(req["image_b64"]),
                                    dtype=np.float32).reshape(req["shape"])
                out = denoiser.predict_noise(img.astype(np.float64),
                                             req["prompt"], req["t"])
            elif op == "embed_image":
                img = np.frombuffer(base64.b64decode(req["image_b64"]),
                                    dtype=np.float32).reshape(req["shape"])
                out = embedder.embed_image(img.astype(np.float64))
            elif op == "embed_text":
                out = embedder.embed_text(req["prompt"])
            else:
                raise ConfigurationError(f"unknown op {op!r}")
            resp = {"ok": True}
            resp.update(_encode(out))
        except Exception as e:
            resp = {"ok": False, "error": str(e)}
        writer.write(json.dumps(resp) + "\n")
        writer.flush()
