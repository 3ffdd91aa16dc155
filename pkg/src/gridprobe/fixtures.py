"""Access to the feeder fixtures shipped with the package."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .feeder import Feeder
from .feeder_io import parse_feeder_text

FIXTURES = ("path3", "feeder13", "feeder37")


def fixture_path(name: str) -> Path:
    if name not in FIXTURES:
        raise ValueError(f"unknown fixture {name!r}; available: {FIXTURES}")
    return Path(str(resources.files("gridprobe.data").joinpath(f"{name}.feeder")))


def load_fixture(name: str) -> Feeder:
    return parse_feeder_text(fixture_path(name).read_text())
