import sys
from pathlib import Path

# Test helpers (e.g. the Monte-Carlo oracle) live next to the tests.
sys.path.insert(0, str(Path(__file__).parent))
