#!/usr/bin/env python3
"""Degree, depth and distance of vertices with fixed labels."""
import sys

from rrtcoal.cli import main

if __name__ == "__main__":
    sys.exit(main(["exp", "fixed-label"] + sys.argv[1:]))
