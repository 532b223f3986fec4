"""Shipped assets: the default arm model, demo scenes, task programs, and
scripted adapter responses used by the CLI demos and the test suite."""

from importlib.resources import files
from pathlib import Path


def fixture_path(name: str) -> Path:
    """Filesystem path of a shipped fixture (e.g. ``scenes/recycling.json``)."""
    p = Path(str(files(__package__).joinpath(name)))
    if not p.exists():
        raise FileNotFoundError(f"no shipped fixture named {name!r}")
    return p


def fixture_text(name: str) -> str:
    return fixture_path(name).read_text()
