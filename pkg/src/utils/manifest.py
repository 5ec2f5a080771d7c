"""
Run manifest: an append-only JSON Lines file with one record per pipeline
stage (plus a run header), holding seeds and content digests so a rerun can
be compared byte for byte.
"""

import json
import os
import time
from dataclasses import dataclass, asdict, field
from typing import Optional, Dict, Any, Iterable, List


DEFAULT_MANIFEST_NAME = "manifest.jsonl"


@dataclass
class StageRecord:
    stage: str
    status: str  # started|completed|failed
    seed: Optional[int] = None
    outputs: Dict[str, str] = field(default_factory=dict)  # relative path -> sha256
    started_at: float = 0.0
    finished_at: float = 0.0
    error: Optional[str] = None
    error_summary: Optional[Dict[str, Any]] = None
    warnings: List[str] = field(default_factory=list)


@dataclass
class RunHeader:
    config_digest: str
    seeds: Dict[str, int]
    stages: List[str]
    record: str = "run"


class RunManifest:
    def __init__(self, output_dir: str):
        self.output_dir = output_dir
        os.makedirs(self.output_dir, exist_ok=True)
        self.path = os.path.join(self.output_dir, DEFAULT_MANIFEST_NAME)

    def reset(self) -> None:
        """Start a fresh manifest for a new run."""
        if os.path.exists(self.path):
            os.remove(self.path)

    def append(self, rec) -> None:
        with open(self.path, 'a', encoding='utf-8') as f:
            f.write(json.dumps(asdict(rec), ensure_ascii=False, sort_keys=True, default=str) + "\n")

    def start_stage(self, stage: str, seed: Optional[int] = None) -> float:
        started = time.time()
        self.append(StageRecord(stage=stage, status="started", seed=seed, started_at=started))
        return started

    def iter_records(self) -> Iterable[Dict[str, Any]]:
        if not os.path.exists(self.path):
            return
        with open(self.path, 'r', encoding='utf-8') as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                try:
                    yield json.loads(line)
                except json.JSONDecodeError:
                    continue

    def header(self) -> Optional[Dict[str, Any]]:
        for rec in self.iter_records():
            if rec.get('record') == 'run':
                return rec
        return None

    def latest_status(self) -> Dict[str, Dict[str, Any]]:
        """Latest record per stage, in first-seen stage order."""
        latest: Dict[str, Dict[str, Any]] = {}
        for rec in self.iter_records():
            stage = rec.get('stage')
            if stage:
                latest[stage] = rec
        return latest

    def get_status_sets(self):
        """
        Return the sets of completed and failed stages by latest status.
        """
        latest = self.latest_status()
        completed = {k for k, v in latest.items() if v.get('status') == 'completed'}
        failed = {k for k, v in latest.items() if v.get('status') == 'failed'}
        return completed, failed

    def output_digests(self) -> Dict[str, str]:
        """All output digests of completed stages, merged."""
        digests: Dict[str, str] = {}
        for rec in self.latest_status().values():
            if rec.get('status') == 'completed':
                digests.update(rec.get('outputs') or {})
        return dict(sorted(digests.items()))
