from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fixtures import make_misc_db, make_patents_db  # noqa: E402

from sqlscout.dblayer import Dialect, open_database  # noqa: E402


@pytest.fixture()
def patents_path(tmp_path):
    return make_patents_db(tmp_path / "patents.db")


@pytest.fixture()
def patents_db(patents_path):
    db = open_database(str(patents_path), Dialect.SQLITE, read_only=True)
    yield db
    db.close()


@pytest.fixture()
def misc_path(tmp_path):
    return make_misc_db(tmp_path / "misc.db")


@pytest.fixture()
def misc_db(misc_path):
    db = open_database(str(misc_path), Dialect.SQLITE, read_only=True)
    yield db
    db.close()
