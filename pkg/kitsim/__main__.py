#!/usr/bin/env python3
"""
Entry point for kitsim
Usage: python -m kitsim <command> --config PATH [options]
"""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
