import sys
from pathlib import Path

# make the shared helpers in this directory importable
sys.path.insert(0, str(Path(__file__).parent))
