"""
This script serves as the entry point for gapkit.
`python -m gapkit` and the `gapkit` console script both dispatch to
the sub-commands defined in `gapkit.cli`.
"""

import sys

from gapkit.cli import main

if __name__ == "__main__":
    sys.exit(main())
