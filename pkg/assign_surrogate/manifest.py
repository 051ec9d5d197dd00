"""
Run manifest - Per-stage completion records of one experiment directory.

Each stage stores the digest it ran under, derived from its own config
sections, the root seed and the digests of its upstream stages. A stage whose
recorded digest no longer matches the current config is stale.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import __version__
from .errors import DatasetError, StageError

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"


class RunManifest:
    """The ``manifest.json`` of an experiment directory."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.path = self.directory / MANIFEST_FILE
        self.stages: Dict[str, Dict] = {}
        self.seed: Optional[int] = None
        if self.path.exists():
            try:
                data = json.loads(self.path.read_text(encoding="utf-8"))
                self.stages = dict(data.get("stages", {}))
                self.seed = data.get("seed")
            except ValueError as e:
                raise DatasetError(f"{self.path}: {e}") from None

    def entry(self, stage: str) -> Optional[Dict]:
        entry = self.stages.get(stage)
        return entry if entry and entry.get("completed") else None

    def require(self, stage: str, expected_digest: str, command: str):
        """Fail unless ``stage`` completed under ``expected_digest``."""
        entry = self.entry(stage)
        if entry is None:
            raise StageError(f"missing manifest entry for stage '{stage}' in {self.path}; run `{command}` first")
        if entry["digest"] != expected_digest:
            raise StageError(
                f"stage '{stage}' in {self.path} is stale for the current config; "
                f"rerun `{command}` or pass --force"
            )

    def check_overwrite(self, stage: str, force: bool):
        if self.entry(stage) is not None and not force:
            raise StageError(f"stage '{stage}' already complete in {self.directory}; pass --force to overwrite")

    def record(self, stage: str, digest: str, upstream: Dict[str, str], outputs: Sequence[str], seed: int):
        self.seed = seed
        self.stages[stage] = {
            "completed": True,
            "digest": digest,
            "upstream": dict(sorted(upstream.items())),
            "outputs": sorted(outputs),
        }
        self.save()

    def save(self):
        self.directory.mkdir(parents=True, exist_ok=True)
        data = {"tool_version": __version__, "seed": self.seed, "stages": self.stages}
        self.path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.debug("Updated %s", self.path)


def combine_digests(own: str, upstream: List[str]) -> str:
    material = "|".join([own] + list(upstream)).encode("utf-8")
    return hashlib.sha256(material).hexdigest()
