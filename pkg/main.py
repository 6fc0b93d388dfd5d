# main.py

import sys

from cli import run

# === CLI Execution Only ===
if __name__ == "__main__":
    sys.exit(run())
