"""Run the command-line interface with ``python -m mdh``."""

import sys

from .cli import main

sys.exit(main())
