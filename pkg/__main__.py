# Copyright (C) 2025, Kan Torii (qoolloop).
"""Run the command-line front end: `python -m pypartition <subcommand>`."""

import sys

from .cli import main

sys.exit(main())
