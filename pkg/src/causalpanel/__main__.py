"""Allow ``python -m causalpanel``."""

import sys

from causalpanel.cli import main

if __name__ == "__main__":
    sys.exit(main())
