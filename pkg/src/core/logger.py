"""
Logging and Error Handling System

Centralized logging configuration for hurpipe plus the tracker that records
stage failures for the run manifest.

Two logger trees share one set of handlers: "hurpipe.*" for the CLI and
"src.*" for library modules, which only ever call logging.getLogger(__name__).
"""

import logging
import logging.handlers
import os
import sys
import traceback
from collections import Counter
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

LIBRARY_LOGGER = "src"

DETAILED_FORMAT = '%(asctime)s | %(name)s | %(levelname)s | %(funcName)s:%(lineno)d | %(message)s'
CONSOLE_FORMAT = '%(asctime)s | %(levelname)s | %(message)s'


class HurpipeLogger:
    """
    Owns the hurpipe log handlers.

    - <app>.log: everything from DEBUG up, rotated at 10 MB
    - <app>_errors.log: ERROR and above, rotated at 5 MB
    - stderr: the console level (INFO unless -v); stdout stays free for results
    """

    def __init__(self, log_dir: str = "logs", app_name: str = "hurpipe"):
        self.log_dir = Path(log_dir)
        self.app_name = app_name
        self.handlers: List[logging.Handler] = []
        self.log_dir.mkdir(parents=True, exist_ok=True)

    def _build_handlers(self, console_level: int) -> List[logging.Handler]:
        detailed = logging.Formatter(DETAILED_FORMAT, datefmt='%Y-%m-%d %H:%M:%S')

        run_log = logging.handlers.RotatingFileHandler(
            self.log_dir / f"{self.app_name}.log", maxBytes=10 * 1024 * 1024, backupCount=5, encoding='utf-8')
        run_log.setLevel(logging.DEBUG)
        run_log.setFormatter(detailed)

        error_log = logging.handlers.RotatingFileHandler(
            self.log_dir / f"{self.app_name}_errors.log", maxBytes=5 * 1024 * 1024, backupCount=3,
            encoding='utf-8')
        error_log.setLevel(logging.ERROR)
        error_log.setFormatter(detailed)

        console = logging.StreamHandler(sys.stderr)
        console.setLevel(console_level)
        console.setFormatter(logging.Formatter(CONSOLE_FORMAT, datefmt='%H:%M:%S'))

        handlers = [run_log, console, error_log]
        for handler in handlers:
            handler.set_name(f"{self.app_name}:{id(self)}")
        return handlers

    def attach(self, console_level: int = logging.INFO) -> logging.Logger:
        """
        Install fresh handlers on the app and library loggers.

        Handlers left by an earlier attach (possibly to another log_dir) are
        closed first, so calling this twice never duplicates output.
        """
        _remove_owned_handlers(self.app_name)
        self.handlers = self._build_handlers(console_level)
        for name in (self.app_name, LIBRARY_LOGGER):
            target = logging.getLogger(name)
            target.setLevel(logging.DEBUG)
            target.propagate = False
            for handler in self.handlers:
                target.addHandler(handler)
        return logging.getLogger(self.app_name)

    def get_logger(self, name: Optional[str] = None) -> logging.Logger:
        """Logger for a component: hurpipe.<name>, or the app logger itself."""
        return logging.getLogger(f"{self.app_name}.{name}" if name else self.app_name)

    def log_system_info(self):
        import numpy
        import pandas
        import scipy

        logger = self.get_logger('system')
        logger.debug("=== hurpipe started ===")
        logger.debug(f"Python {sys.version.split()[0]} on {sys.platform}")
        logger.debug(f"numpy {numpy.__version__}, pandas {pandas.__version__}, scipy {scipy.__version__}")
        logger.debug(f"Working directory: {os.getcwd()}")
        logger.debug(f"Log directory: {self.log_dir.absolute()}")


def _remove_owned_handlers(app_name: str):
    prefix = f"{app_name}:"
    for name in (app_name, LIBRARY_LOGGER):
        target = logging.getLogger(name)
        for handler in list(target.handlers):
            if (handler.get_name() or "").startswith(prefix):
                target.removeHandler(handler)
                handler.close()


@dataclass
class TrackedError:
    id: str
    type: str
    message: str
    stage: Optional[str]
    timestamp: str = field(default_factory=lambda: datetime.now().isoformat(timespec='seconds'))
    additional_info: Dict[str, Any] = field(default_factory=dict)
    traceback: str = ""


class ErrorTracker:
    """
    Collects stage errors and warnings.

    The summary is JSON-ready and goes into the failing stage's manifest
    record; tracebacks stay in the debug log only.
    """

    def __init__(self, logger: logging.Logger):
        self.logger = logger
        self.errors: List[TrackedError] = []
        self.warnings: List[Dict[str, Any]] = []

    def log_error(self, error: BaseException, stage: Optional[str] = None,
                  additional_info: Optional[Dict[str, Any]] = None) -> str:
        """Record an exception raised in a stage. Returns its id (ERR_000, ERR_001, ...)."""
        entry = TrackedError(
            id=f"ERR_{len(self.errors):03d}",
            type=type(error).__name__,
            message=str(error),
            stage=stage,
            additional_info=dict(additional_info or {}),
            traceback="".join(traceback.format_exception(type(error), error, error.__traceback__)),
        )
        self.errors.append(entry)
        where = f" (stage: {stage})" if stage else ""
        self.logger.error(f"[{entry.id}] {entry.type}: {entry.message}{where}")
        self.logger.debug(f"[{entry.id}] Full traceback:\n{entry.traceback}")
        return entry.id

    def log_warning(self, message: str, stage: Optional[str] = None) -> str:
        warning_id = f"WARN_{len(self.warnings):03d}"
        self.warnings.append({
            'id': warning_id,
            'timestamp': datetime.now().isoformat(timespec='seconds'),
            'message': message,
            'stage': stage,
        })
        where = f" (stage: {stage})" if stage else ""
        self.logger.warning(f"[{warning_id}] {message}{where}")
        return warning_id

    def get_error_summary(self) -> Dict[str, Any]:
        def public(e: TrackedError) -> Dict[str, Any]:
            d = asdict(e)
            del d['traceback']
            return d

        return {
            'total_errors': len(self.errors),
            'total_warnings': len(self.warnings),
            'error_types': dict(Counter(e.type for e in self.errors)),
            'failed_stages': sorted({e.stage for e in self.errors if e.stage}),
            'recent_errors': [public(e) for e in self.errors[-5:]],
            'recent_warnings': self.warnings[-5:],
        }


# Global logger instance
_logger_instance: Optional[HurpipeLogger] = None


def get_logger(name: Optional[str] = None) -> logging.Logger:
    """
    Get a component logger, setting up default handlers (./logs) on first use.

    Args:
        name: component name; None gives the app logger
    """
    global _logger_instance

    if _logger_instance is None:
        _logger_instance = HurpipeLogger()
        _logger_instance.attach()
    return _logger_instance.get_logger(name)


def initialize_logging(log_dir: str = "logs", level: int = logging.INFO):
    """
    Initialize the global logging system.

    Args:
        log_dir: Directory for log files
        level: Console logging level
    """
    global _logger_instance
    _logger_instance = HurpipeLogger(log_dir)
    _logger_instance.attach(level)
    _logger_instance.log_system_info()
