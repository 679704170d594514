import sys
import os

# Add the repository root (for `src.` imports) and this directory (for shared builders) to the path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))
sys.path.insert(0, os.path.dirname(__file__))
