#!/usr/bin/env python3
"""Factorial moments of near-maximal degree counts."""
import sys

from rrtcoal.cli import main

if __name__ == "__main__":
    sys.exit(main(["exp", "moments"] + sys.argv[1:]))
