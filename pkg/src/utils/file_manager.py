"""
File Management Utilities

This module lays out the pipeline's output directory, writes every output
atomically (temp file, then rename) and computes content digests for the
run manifest.
"""

import hashlib
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Union

PathLike = Union[str, Path]

STAGE_DIRS = ("synth", "composite", "labels", "folds", "models", "maps", "reports")


def atomic_write_bytes(path: PathLike, data: bytes) -> str:
    """
    Write bytes to path without ever leaving a partial file behind.

    Args:
        path: Destination file path
        data: Payload

    Returns:
        The destination path as a string
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=str(path.parent))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return str(path)


def atomic_write_text(path: PathLike, text: str) -> str:
    """Write UTF-8 text atomically."""
    return atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_json(path: PathLike, obj: Any) -> str:
    """Write JSON atomically with sorted keys so equal objects give equal bytes."""
    return atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def sha256_digest(path: PathLike) -> str:
    """Return the hex SHA-256 of a file's content."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class FileManager:
    """
    Manages the output directory of a pipeline run.

    One sub-directory per stage kind; all writes go through the atomic
    helpers so a failed stage never leaves a final-looking file.
    """

    def __init__(self, base_output_dir: PathLike = "output"):
        """
        Initialize the file manager.

        Args:
            base_output_dir: Base directory for all output files
        """
        self.base_output_dir = Path(base_output_dir)
        self.logger = logging.getLogger(__name__)
        self._create_directories()

    def _create_directories(self):
        self.base_output_dir.mkdir(parents=True, exist_ok=True)
        for name in STAGE_DIRS:
            (self.base_output_dir / name).mkdir(exist_ok=True)
        self.logger.debug(f"Output directories ready at: {self.base_output_dir.absolute()}")

    def stage_dir(self, stage: str) -> Path:
        """Directory for a stage kind (must be one of STAGE_DIRS)."""
        if stage not in STAGE_DIRS:
            raise KeyError(f"unknown stage directory '{stage}'")
        return self.base_output_dir / stage

    def path_for(self, stage: str, filename: str) -> Path:
        return self.stage_dir(stage) / filename

    def write_json(self, stage: str, filename: str, obj: Any) -> str:
        return atomic_write_json(self.path_for(stage, filename), obj)

    def relative(self, path: PathLike) -> str:
        """Path relative to the output root, with forward slashes."""
        return Path(path).resolve().relative_to(self.base_output_dir.resolve()).as_posix()

    def digests(self, paths: List[PathLike]) -> Dict[str, str]:
        """Map each output (relative path) to its content digest."""
        return {self.relative(p): sha256_digest(p) for p in sorted(str(p) for p in paths)}

    def get_output_stats(self) -> Dict[str, int]:
        """Count files per stage directory."""
        stats = {}
        for name in STAGE_DIRS:
            d = self.base_output_dir / name
            stats[name] = sum(1 for p in d.iterdir() if p.is_file() and not p.name.startswith(".")) if d.exists() else 0
        return stats
