import os
import pathlib
import shutil

import pytest

SOURCE_DIR = pathlib.Path(os.environ.get("OTGYM_SOURCE_DIR", pathlib.Path(__file__).resolve().parents[2]))


def _find_binary():
    env = os.environ.get("OTGYM_BIN")
    if env:
        return pathlib.Path(env)
    for cand in (SOURCE_DIR / "build" / "otgym", shutil.which("otgym")):
        if cand and pathlib.Path(cand).exists():
            return pathlib.Path(cand)
    return None


@pytest.fixture(scope="session")
def source_dir():
    return SOURCE_DIR


@pytest.fixture(scope="session")
def schema_dir():
    return SOURCE_DIR / "schemas" / "protocol"


@pytest.fixture(scope="session")
def fixture_dir():
    return SOURCE_DIR / "tests" / "fixtures" / "protocol"


@pytest.fixture(scope="session")
def otgym_bin():
    path = _find_binary()
    if path is None or not path.exists():
        pytest.skip("otgym executable not built")
    return path
