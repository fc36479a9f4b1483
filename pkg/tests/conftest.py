from pathlib import Path

import pytest

from sbilint.config import LintSettings
from sbilint.stages.openapi import load_spec_dir

from pcapgen import SPEC_DIR, CaptureBuilder


@pytest.fixture(scope="session")
def spec_dir() -> Path:
    return SPEC_DIR


@pytest.fixture(scope="session")
def spec_index(spec_dir):
    return load_spec_dir(spec_dir)


@pytest.fixture
def builder() -> CaptureBuilder:
    return CaptureBuilder()


@pytest.fixture
def settings_for(spec_dir):
    def make(*pcaps: Path, **overrides) -> LintSettings:
        return LintSettings(specs=spec_dir, pcaps=tuple(pcaps), **overrides)
    return make
