#!/usr/bin/env python3
"""
Launcher for the ledger command-line tool.
"""

import os
import sys

# Add the current directory to Python path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from cli.main import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
