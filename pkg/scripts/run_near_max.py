#!/usr/bin/env python3
"""Counts and marks of vertices near the maximal degree (n must be a power of two)."""
import sys

from rrtcoal.cli import main

if __name__ == "__main__":
    sys.exit(main(["exp", "near-max"] + sys.argv[1:]))
