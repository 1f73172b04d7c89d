#!/usr/bin/env python3
"""Depth, label and distance of vertices conditioned on large degree."""
import sys

from rrtcoal.cli import main

if __name__ == "__main__":
    sys.exit(main(["exp", "cond-degree"] + sys.argv[1:]))
