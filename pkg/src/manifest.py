import hashlib
import json
import logging
import os
import platform
import sys
from datetime import datetime
from importlib import metadata
from typing import Any, Dict, List, Optional

from pydantic import BaseModel

logger = logging.getLogger(__name__)

TRACKED_PACKAGES = ("numpy", "pydantic", "PyYAML", "python-dotenv")


def config_hash(config: BaseModel) -> str:
    """sha256 of the canonical JSON form of a validated config."""
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def package_versions() -> Dict[str, Optional[str]]:
    versions: Dict[str, Optional[str]] = {}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = None
    return versions


def build_manifest(command: str, argv: List[str], config: Optional[BaseModel] = None,
                   seeds: Optional[Dict[str, int]] = None, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    manifest: Dict[str, Any] = {
        "command": command,
        "argv": list(argv),
        "created": datetime.now().isoformat(),
        "python": sys.version.split()[0],
        "platform": platform.platform(),
        "packages": package_versions(),
        "config_hash": config_hash(config) if config is not None else None,
        "config": config.model_dump(mode="json") if config is not None else None,
        "seeds": seeds or {},
    }
    if extra:
        manifest.update(extra)
    return manifest


def write_manifest(workdir: str, manifest: Dict[str, Any]) -> str:
    os.makedirs(workdir, exist_ok=True)
    path = os.path.join(workdir, "manifest.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    logger.info(f"Manifest written to {path}")
    return path
