#!/usr/bin/env python3
"""Command-line entry script: ``python unwrap.py <command> [options]``."""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "src"))

from cli import run  # noqa: E402

if __name__ == "__main__":
    sys.exit(run())
