import sys
from pathlib import Path


def test_imports():
    """The package imports and reports the shipped version."""
    repo_root = Path(__file__).resolve().parents[1]
    sys.path.insert(0, str(repo_root))

    import src
    from src import cli, refiner, solver, simworld  # noqa: F401

    assert src.__version__ == (repo_root / "VERSION.txt").read_text(encoding="utf-8").strip()
