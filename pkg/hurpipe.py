#!/usr/bin/env python3
"""Launcher: `python hurpipe.py <command> ...` is `python -m src.cli <command> ...`."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from src.cli.app import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
