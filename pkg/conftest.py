import sys
from pathlib import Path

# Add the package to the path
sys.path.insert(0, str(Path(__file__).parent))
