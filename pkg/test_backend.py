#!/usr/bin/env python3
"""
Backend Testing Script for hurpipe

This script tests the supporting components (logging, error tracking,
config validation, output files, the run manifest and seeding) that every
pipeline stage relies on.
"""

import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import pytest

# Add the repository root to the path
sys.path.insert(0, str(Path(__file__).parent))

from src.core.errors import ConfigError
from src.core.logger import ErrorTracker, get_logger, initialize_logging
from src.utils.file_manager import FileManager, atomic_write_bytes, sha256_digest
from src.utils.manifest import RunHeader, RunManifest, StageRecord
from src.utils.seeding import derive_rng, derive_seed
from src.utils.validators import (build_dataclass, load_json, to_jsonable, validate_input_path,
                                  validate_positive_int, validate_seed, validate_threads)


def test_logging_system(tmp_path):
    """Test the logging system."""
    print("🔍 Testing Logging System...")

    initialize_logging(str(tmp_path / "logs"))
    logger = get_logger('test')
    logger.info("Logging system test - INFO level")
    logger.debug("Logging system test - DEBUG level")

    error_tracker = ErrorTracker(get_logger("test"))
    try:
        raise ValueError("Test error for tracking")
    except Exception as e:
        error_id = error_tracker.log_error(e, "train")
    error_tracker.log_warning("class 3 absent from the training split", "train")

    summary = error_tracker.get_error_summary()
    assert error_id == "ERR_000"
    assert summary['total_errors'] == 1 and summary['total_warnings'] == 1
    assert summary['error_types'] == {"ValueError": 1}
    assert summary['failed_stages'] == ["train"]
    assert "traceback" not in summary['recent_errors'][0]
    print(f"   ✓ Error logged with ID: {error_id}")


def test_value_validation():
    """Test single-value validators."""
    print("🔍 Testing Value Validation...")

    cases = [
        (validate_positive_int(3, "k"), True),
        (validate_positive_int(0, "k"), False),
        (validate_positive_int(True, "k"), False),
        (validate_seed(2 ** 64 - 1), True),
        (validate_seed(2 ** 64), False),
        (validate_seed(-1), False),
        (validate_threads(4), True),
        (validate_threads(-1), False),
    ]
    for (is_valid, _, error), expected_valid in cases:
        assert is_valid == expected_valid, error
    assert validate_threads(0)[1] >= 1
    ok, _, error = validate_input_path("/definitely/not/here.csv", "countries_csv")
    assert not ok and "countries_csv" in error


@dataclass(frozen=True)
class _Inner:
    size: int = 3
    ratio: float = 0.5


@dataclass(frozen=True)
class _Outer:
    name: str = "x"
    codes: Tuple[str, ...] = ()
    inner: _Inner = field(default_factory=_Inner)
    path: Optional[str] = None
    enabled: bool = False


def test_strict_config_builder():
    """Test the nested dataclass builder."""
    print("🔍 Testing Config Builder...")

    built = build_dataclass(_Outer, {"codes": ["AA", "NA"], "inner": {"ratio": 1}, "enabled": True})
    assert built == _Outer(codes=("AA", "NA"), inner=_Inner(ratio=1.0), enabled=True)
    assert isinstance(built.inner.ratio, float)
    assert to_jsonable(built) == {"name": "x", "codes": ["AA", "NA"], "inner": {"size": 3, "ratio": 1.0},
                                  "path": None, "enabled": True}

    with pytest.raises(ConfigError, match="inner.size"):
        build_dataclass(_Outer, {"inner": {"size": 2.5}})
    with pytest.raises(ConfigError, match="in 'inner'"):
        build_dataclass(_Outer, {"inner": {"colour": 1}})
    with pytest.raises(ConfigError, match="enabled"):
        build_dataclass(_Outer, {"enabled": "yes"})
    with pytest.raises(ConfigError):
        build_dataclass(_Outer, ["not", "an", "object"])


def test_load_json_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_json(bad)
    with pytest.raises(ConfigError, match="not found"):
        load_json(tmp_path / "absent.json")


def test_file_manager(tmp_path):
    """Test the file manager."""
    print("🔍 Testing File Manager...")

    file_manager = FileManager(tmp_path / "out")
    for name in ("synth", "labels", "models", "reports"):
        assert file_manager.stage_dir(name).is_dir()
    with pytest.raises(KeyError):
        file_manager.stage_dir("html")

    a = atomic_write_bytes(file_manager.path_for("maps", "r0000c0000.hurt"), b"abc")
    b = file_manager.write_json("reports", "metrics.json", {"b": 1, "a": [1, 2]})
    assert Path(b).read_text().startswith('{\n  "a"')
    digests = file_manager.digests([b, a])
    assert list(digests) == ["maps/r0000c0000.hurt", "reports/metrics.json"]
    assert digests["maps/r0000c0000.hurt"] == sha256_digest(a)

    stats = file_manager.get_output_stats()
    assert stats["maps"] == 1 and stats["reports"] == 1 and stats["synth"] == 0
    print(f"   ✓ Output stats: {stats}")


def test_atomic_write_leaves_no_partial_file(tmp_path):
    target = tmp_path / "tile.hurt"
    atomic_write_bytes(target, b"first")
    with pytest.raises(TypeError):
        atomic_write_bytes(target, object())
    assert target.read_bytes() == b"first"
    assert [p.name for p in tmp_path.iterdir()] == ["tile.hurt"]


def test_run_manifest(tmp_path):
    """Test the append-only run manifest."""
    print("🔍 Testing Run Manifest...")

    manifest = RunManifest(str(tmp_path))
    manifest.append(RunHeader("abc", {"synth": 1}, ["synth", "fuse"]))
    manifest.start_stage("synth", 1)
    manifest.append(StageRecord("synth", "completed", 1, {"synth/a.hurt": "00"}))
    manifest.start_stage("fuse")
    manifest.append(StageRecord("fuse", "failed", error="DataError: bad code"))
    with open(manifest.path, "a", encoding="utf-8") as f:
        f.write("not json\n")

    assert manifest.header()["config_digest"] == "abc"
    completed, failed = manifest.get_status_sets()
    assert completed == {"synth"} and failed == {"fuse"}
    assert manifest.output_digests() == {"synth/a.hurt": "00"}
    for line in Path(manifest.path).read_text().splitlines()[:-1]:
        json.loads(line)

    manifest.reset()
    assert list(manifest.iter_records()) == []


def test_seed_derivation_is_keyed():
    assert derive_seed(1, "tile", "r0000c0000") == derive_seed(1, "tile", "r0000c0000")
    assert derive_seed(1, "tile", "r0000c0000") != derive_seed(1, "tile", "r0000c0001")
    assert derive_seed(1, "ab") != derive_seed(1, "a", "b")
    assert 0 <= derive_seed(2 ** 64 - 1, "x") < 2 ** 64
    a = derive_rng(7, "sample", 3).random(5)
    b = derive_rng(7, "sample", 3).random(5)
    assert a.tolist() == b.tolist()


def test_library_logs_reach_app_handlers(tmp_path):
    initialize_logging(str(tmp_path / "logs"))
    records = []

    class Capture(logging.Handler):
        def emit(self, record):
            records.append(record)

    handler = Capture()
    lib = logging.getLogger("src")
    lib.addHandler(handler)
    try:
        logging.getLogger("src.core.raster").debug("grid ready")
    finally:
        lib.removeHandler(handler)
    assert [r.getMessage() for r in records] == ["grid ready"]
    assert lib.propagate is False


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
