"""Main entry point for the mm-search-agent command line."""

import sys

from src.adapters.incoming.cli.app import main

if __name__ == "__main__":
    sys.exit(main())
