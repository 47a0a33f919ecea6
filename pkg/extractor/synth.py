#!/usr/bin/env python3
"""Entry point for the synthetic dataset generator; see
activation_extractor/synth.py for the implementation."""

import sys
from pathlib import Path

try:
    from activation_extractor import synth
except ImportError:
    sys.path.insert(0, str(Path(__file__).resolve().parent))
    from activation_extractor import synth

if __name__ == "__main__":
    sys.exit(synth.main())
