#!/usr/bin/env python3
"""
mpp_verifier - simulation and numeric verification of mixed Poisson processes

Usage:
    python run.py verify --config inverse_gamma_reciprocal
    python run.py fdd --config erlang_control --times 1,2 --counts 1,0
"""

import sys

from mpp_verifier.cli import main

if __name__ == "__main__":
    sys.exit(main())
