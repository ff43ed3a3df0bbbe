#!/usr/bin/env python
"""keymark's command-line utility (same as `python -m keymark`)."""
import sys


def main():
    """Run a keymark command."""
    try:
        from keymark.cli import main as keymark_main
    except ImportError as exc:
        raise ImportError(
            "Couldn't import keymark's dependencies. Did you install "
            "requirements.txt into the active virtual environment?"
        ) from exc
    sys.exit(keymark_main(sys.argv[1:]))


if __name__ == '__main__':
    main()
