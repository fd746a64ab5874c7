import sys

from hadamard.cli.main import main

if __name__ == "__main__":
    sys.exit(main())
