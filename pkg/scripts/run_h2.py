#!/usr/bin/env python3
"""Depth collected below the truncation step."""
import sys

from rrtcoal.cli import main

if __name__ == "__main__":
    sys.exit(main(["exp", "h2"] + sys.argv[1:]))
