#!/usr/bin/env python3
"""Tail of the first step at which two tracked vertices merge."""
import sys

from rrtcoal.cli import main

if __name__ == "__main__":
    sys.exit(main(["exp", "tau"] + sys.argv[1:]))
