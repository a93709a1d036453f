import io
import threading

import numpy as np
import pytest

from raypaint.errors import ConfigurationError
from raypaint.guidance import NoiseSchedule, TargetSpec, ToyDeltaDenoiser, ToyPaletteEmbedder
from raypaint.wire import WireClient, WireDenoiser, WireEmbedder, serve_providers


class _Pipe:
    """In-memory blocking text pipe good enough for request/response tests."""

    def __init__(self):
        self._buf = []
        self._cv = threading.Condition()
        self._closed = False

    def write(self, s):
        with self._cv:
            self._buf.append(s)
            self._cv.notify_all()

    def flush(self):
        pass

    def close(self):
        with self._cv:
            self._closed = True
            self._cv.notify_all()

    def readline(self):
        with self._cv:
            while not self._buf and not self._closed:
                self._cv.wait()
            if not self._buf:
                return ""
            return self._buf.pop(0)

    def __iter__(self):
        while True:
            line = self.readline()
            if not line:
                return
            yield line


@pytest.fixture
def wire_pair():
    schedule = NoiseSchedule()
    rng = np.random.default_rng(0)
    rgb = rng.uniform(0.1, 0.9, (8, 8, 3))
    mask = np.zeros((8, 8))
    mask[2:6, 2:6] = 1.0
    den = ToyDeltaDenoiser(schedule, {"p": TargetSpec(color=(0.3, 0.6, 0.2))},
                           [(rgb, mask)]).for_view(0)
    emb = ToyPaletteEmbedder()
    to_server, to_client = _Pipe(), _Pipe()
    server = threading.Thread(target=serve_providers,
                              args=(den, emb, to_server, to_client), daemon=True)
    server.start()
    client = WireClient(reader=to_client, writer=to_server)
    yield client, den, emb, schedule
    to_server.close()


def test_wire_denoiser_matches_local(wire_pair):
    client, den, _, schedule = wire_pair
    remote = WireDenoiser(client)
    rng = np.random.default_rng(1)
    noisy = rng.uniform(size=(8, 8, 3)).astype(np.float32).astype(np.float64)
    local = den.predict_noise(noisy, "p", 321)
    over_wire = remote.predict_noise(noisy, "p", 321)
    np.testing.assert_allclose(over_wire, local, atol=1e-6)  # float32 transport


def test_wire_embedder_matches_local(wire_pair):
    client, _, emb, _ = wire_pair
    remote = WireEmbedder(client)
    rng = np.random.default_rng(2)
    img = rng.uniform(0.1, 1.0, (6, 6, 3)).astype(np.float32).astype(np.float64)
    np.testing.assert_allclose(remote.embed_image(img), emb.embed_image(img),
                               atol=1e-6)
    np.testing.assert_allclose(remote.embed_text("leaves"), emb.embed_text("leaves"),
                               atol=1e-7)


def test_wire_error_propagates(wire_pair):
    client, _, _, _ = wire_pair
    remote = WireDenoiser(client)
    with pytest.raises(ConfigurationError, match="unknown prompt"):
        remote.predict_noise(np.zeros((8, 8, 3)), "nope", 5)
