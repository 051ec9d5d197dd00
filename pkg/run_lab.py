#!/usr/bin/env python
"""
AssignSurrogate - Command-line interface.

This script runs one pipeline stage per invocation, for example
``python run_lab.py net gen --rows 5 --cols 5 --out exp/``.
"""

from assign_surrogate.main import main

if __name__ == "__main__":
    main()
