"""Main entry point for the package."""

import sys
from pathlib import Path

# Add src directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))


def main():
    """Main entry point."""
    from src.cli import main as cli_main

    sys.exit(cli_main())


if __name__ == "__main__":
    main()
