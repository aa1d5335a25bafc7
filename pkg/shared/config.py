from __future__ import annotations
import os
from dataclasses import dataclass, asdict
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict

from dotenv import load_dotenv


@dataclass(frozen=True)
class AppConfig:
    # Downloads
    MIRROR_URL: str | None       # overrides every per-dataset default mirror
    CACHE_DIR: str               # <cache>/<dataset>/<filename>
    MANIFEST_PATH: str | None    # JSON checksum overrides
    HTTP_TIMEOUT: float

    # Logging
    LOG_LEVEL: str

    def safe_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["CACHE_DIR_EXISTS"] = Path(self.CACHE_DIR).is_dir()
        return d


@lru_cache(maxsize=1)
def get_config() -> AppConfig:
    # .env never overrides variables already exported in the shell
    load_dotenv(override=False)

    cache = os.environ.get("HEURNET_CACHE") or str(Path.home() / ".cache" / "heurnet")
    return AppConfig(
        MIRROR_URL=os.environ.get("HEURNET_MIRROR") or None,
        CACHE_DIR=os.path.expanduser(cache),
        MANIFEST_PATH=os.environ.get("HEURNET_MANIFEST") or None,
        HTTP_TIMEOUT=float(os.environ.get("HEURNET_HTTP_TIMEOUT", "60")),
        LOG_LEVEL=os.environ.get("HEURNET_LOG_LEVEL", "INFO").upper(),
    )
