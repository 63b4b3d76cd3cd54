"""``python -m holdersel``."""

import sys

from .cli import main

sys.exit(main())
