#!/usr/bin/env python3
"""Degree tail of a single vertex against the exact value."""
import sys

from rrtcoal.cli import main

if __name__ == "__main__":
    sys.exit(main(["exp", "degree-tail"] + sys.argv[1:]))
