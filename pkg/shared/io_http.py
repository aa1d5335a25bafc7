"""Dataset downloads over HTTP into a local cache with pinned SHA-256 sums.

Cache layout: <cache>/<dataset>/<filename>. A cached file is re-verified on
every use; a mismatch is an error, never a silent re-download.
"""
from __future__ import annotations
import hashlib
import json
import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Tuple

import requests

from parsers.idx import image_set
from shared.config import get_config
from shared.errors import ChecksumError, NetworkError
from shared.schemas import LabeledImageSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DatasetSpec:
    mirror: str
    files: Mapping[str, str]   # filename -> sha256


TRAIN_IMAGES = "train-images-idx3-ubyte.gz"
TRAIN_LABELS = "train-labels-idx1-ubyte.gz"
TEST_IMAGES = "t10k-images-idx3-ubyte.gz"
TEST_LABELS = "t10k-labels-idx1-ubyte.gz"

DATASETS: Dict[str, DatasetSpec] = {
    "mnist": DatasetSpec(
        "https://storage.googleapis.com/cvdf-datasets/mnist/",
        {
            TRAIN_IMAGES: "440fcabf73cc546fa21475e81ea370265605f56be210a4024d2ca8f203523609",
            TRAIN_LABELS: "3552534a0a558bbed6aed32b30c495cca23d567ec52cac8be1a0730e8010255c",
            TEST_IMAGES: "8d422c7b0a1c1c79245a5bcf07fe86e33eeafee792b84584aec276f5a2dbc4e6",
            TEST_LABELS: "f7ae60f92e00ec6debd23a6088c31dbd2371eca3ffa0defaefb259924204aec6",
        },
    ),
    "fashion": DatasetSpec(
        "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
        {
            TRAIN_IMAGES: "3aede38d61863908ad78613f6a32ed271626dd12800ba2636569512369268a84",
            TRAIN_LABELS: "a04f17134ac03560a47e3764e11b92fc97de4d1bfaf8ba1a3aa29af54cc90845",
            TEST_IMAGES: "346e55b948d973a97e58d2351dde16a484bd415d4595297633bb08f03db6a073",
            TEST_LABELS: "67da17c76eaffca5446c3361aaab5c3cd6d1c2608764d35dfb1850b086bf8dd5",
        },
    ),
}


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def load_manifest(path: Optional[str]) -> Dict[str, Dict[str, str]]:
    """Checksum overrides {dataset: {filename: sha256}} from a JSON file."""
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: manifest must be a JSON object")
    return {str(k): {str(fn): str(s).lower() for fn, s in v.items()} for k, v in data.items()}


def expected_checksums(name: str, manifest_path: Optional[str] = None) -> Dict[str, str]:
    sums = dict(DATASETS[name].files)
    sums.update(load_manifest(manifest_path).get(name, {}))
    return sums


def _verify(path: str, expected: str) -> None:
    actual = sha256_file(path)
    if actual != expected:
        raise ChecksumError(path, expected, actual)


def download(url: str, dest: str, expected: str, timeout: float) -> None:
    """Stream url to a temp file next to dest, verify, then rename into place."""
    parent = os.path.dirname(dest)
    os.makedirs(parent, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".part-", dir=parent)
    try:
        with os.fdopen(fd, "wb") as f:
            try:
                with requests.get(url, stream=True, timeout=timeout) as resp:
                    resp.raise_for_status()
                    for chunk in resp.iter_content(chunk_size=1 << 16):
                        f.write(chunk)
            except requests.RequestException as e:
                raise NetworkError(f"download failed for {url}: {e}") from e
        _verify(tmp, expected)
        os.replace(tmp, dest)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def ensure_file(name: str, filename: str, expected: str, cache_dir: str, mirror: str,
                offline: bool, timeout: float) -> Tuple[str, bool]:
    """Path of a verified cached file; (path, was_cache_hit)."""
    path = os.path.join(cache_dir, name, filename)
    if os.path.exists(path):
        _verify(path, expected)
        logger.info("cache hit: %s", path)
        return path, True
    if offline:
        raise NetworkError(f"{path} not cached and offline mode is on")
    url = mirror.rstrip("/") + "/" + filename
    logger.info("cache miss: downloading %s", url)
    download(url, path, expected, timeout)
    return path, False


def fetch_files(name: str, cache_dir: Optional[str] = None, mirror_url: Optional[str] = None,
                offline: bool = False, workers: int = 4) -> Dict[str, Tuple[str, bool]]:
    if name not in DATASETS:
        raise ValueError(f"unknown dataset {name!r}; expected one of {', '.join(DATASETS)}")
    cfg = get_config()
    cache = os.path.expanduser(cache_dir or cfg.CACHE_DIR)
    mirror = mirror_url or cfg.MIRROR_URL or DATASETS[name].mirror
    sums = expected_checksums(name, cfg.MANIFEST_PATH)

    def one(filename: str):
        return filename, ensure_file(name, filename, sums[filename], cache, mirror, offline, cfg.HTTP_TIMEOUT)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return dict(pool.map(one, sorted(sums)))


def fetch_dataset(name: str, cache_dir: Optional[str] = None, mirror_url: Optional[str] = None,
                  offline: bool = False) -> Tuple[LabeledImageSet, LabeledImageSet]:
    """(train, test) image sets, downloading and verifying as needed."""
    files = fetch_files(name, cache_dir, mirror_url, offline)

    def read(filename: str) -> bytes:
        with open(files[filename][0], "rb") as f:
            return f.read()

    train = image_set(read(TRAIN_IMAGES), read(TRAIN_LABELS), name, "train")
    test = image_set(read(TEST_IMAGES), read(TEST_LABELS), name, "test")
    logger.info("%s: %d train / %d test images", name, len(train), len(test))
    return train, test
