"""Allow ``python -m highway_dqn``."""
import sys

from .cli import main

sys.exit(main())
