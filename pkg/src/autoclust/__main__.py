"""Module entry point so ``python -m autoclust`` matches the console script."""

import sys

from .cli import main

sys.exit(main())
