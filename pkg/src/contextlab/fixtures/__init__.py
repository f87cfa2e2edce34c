"""Shipped data files: demo banks, grade fixtures, and feedback-engine seeds."""

from pathlib import Path

FIXTURES = Path(__file__).resolve().parent


def fixture_path(name: str) -> Path:
    path = FIXTURES / name
    if not path.exists():
        raise FileNotFoundError(f"no shipped fixture named {name!r}")
    return path
