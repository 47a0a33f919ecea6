#!/usr/bin/env python3
"""Entry point for CNN activation extraction; see
activation_extractor/extract.py for the implementation."""

import sys
from pathlib import Path

try:
    from activation_extractor import extract
except ImportError:
    sys.path.insert(0, str(Path(__file__).resolve().parent))
    from activation_extractor import extract

if __name__ == "__main__":
    sys.exit(extract.main())
