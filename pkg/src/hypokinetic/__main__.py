"""Entry point for ``python -m hypokinetic``."""
import sys

from .cli import main

sys.exit(main())
