"""
DGFF extremes toolkit entry point.

    python app.py <subcommand> [flags]

Subcommands: profile, sample, cov-check, compare, tails, second-moment.
"""

from src.cli import main

if __name__ == "__main__":
    raise SystemExit(main())
