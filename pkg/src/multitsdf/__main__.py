"""Allow ``python3 -m multitsdf``."""

import sys

from .cli.main import main

sys.exit(main())
