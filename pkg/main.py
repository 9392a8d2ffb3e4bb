"""
AdsorbKit command-line application
Main entry point for the application.
"""
import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent))

from src.cli.app import run_cli


def main() -> int:
    """Main entry point for the application."""
    return run_cli(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
