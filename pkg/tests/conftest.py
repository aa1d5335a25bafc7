import gzip
import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
import pytest
import requests

from shared import io_http
from shared.config import get_config


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def heurnet_env(tmp_path, monkeypatch):
    """Isolated cache directory and a fresh AppConfig."""
    cache = tmp_path / "cache"
    monkeypatch.setenv("HEURNET_CACHE", str(cache))
    monkeypatch.delenv("HEURNET_MIRROR", raising=False)
    monkeypatch.delenv("HEURNET_MANIFEST", raising=False)
    get_config.cache_clear()
    yield cache
    get_config.cache_clear()


def _idx_bytes(magic, array):
    header = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    return gzip.compress(header + array.astype(np.uint8).tobytes())


class _Response:
    def __init__(self, body, status=200):
        self.body = body
        self.status = status

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False

    def raise_for_status(self):
        if self.status >= 400:
            raise requests.HTTPError(f"{self.status} error")

    def iter_content(self, chunk_size=1):
        for i in range(0, len(self.body), chunk_size):
            yield self.body[i:i + chunk_size]


@dataclass
class FakeMirror:
    url: str
    files: Dict[str, bytes]
    calls: List[str] = field(default_factory=list)


@pytest.fixture
def fake_mirror(heurnet_env, tmp_path, monkeypatch):
    """A tiny 28x28 digit dataset served through a patched requests.get.

    Pinned checksums are overridden through HEURNET_MANIFEST.
    """
    rng = np.random.default_rng(99)
    train_labels = np.repeat(np.arange(10), 2)
    test_labels = np.arange(10)
    files = {
        io_http.TRAIN_IMAGES: _idx_bytes(0x803, rng.integers(0, 256, size=(20, 28, 28))),
        io_http.TRAIN_LABELS: _idx_bytes(0x801, train_labels),
        io_http.TEST_IMAGES: _idx_bytes(0x803, rng.integers(0, 256, size=(10, 28, 28))),
        io_http.TEST_LABELS: _idx_bytes(0x801, test_labels),
    }
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps({"mnist": {k: hashlib.sha256(v).hexdigest() for k, v in files.items()}}))
    monkeypatch.setenv("HEURNET_MANIFEST", str(manifest))
    get_config.cache_clear()

    mirror = FakeMirror("http://mirror.test/mnist/", files)

    def fake_get(url, stream=False, timeout=None):
        mirror.calls.append(url)
        if not url.startswith(mirror.url):
            raise requests.ConnectionError(f"cannot reach {url}")
        name = url[len(mirror.url):]
        if name not in mirror.files:
            return _Response(b"", status=404)
        return _Response(mirror.files[name])

    monkeypatch.setattr(io_http.requests, "get", fake_get)
    return mirror
