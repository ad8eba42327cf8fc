import pathlib
import sys

# make the sibling oracles module importable from every test file
sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent))
