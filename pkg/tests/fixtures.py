"""Deterministic SQLite fixtures used across the suite.

``make_patents_db`` mirrors the intellectual-property walkthrough: a
TECH_CLASS table whose field_code values MS-01..MS-09 mark materials
science, FILING_INFO with a known number of Q1-2014 filings, and three
citation-related tables that support different readings of "earlier
patents each one cites".
"""

from __future__ import annotations

import sqlite3
from pathlib import Path

# Patents 1..6 are materials science; 1..4 filed in Q1 2014.
MS_PATENTS = [1, 2, 3, 4, 5, 6]
Q1_2014_MS_PATENTS = [1, 2, 3, 4]
Q1_2014_FILING_COUNT = 5  # patents 1..4 (MS) plus patent 10 (EE)


def make_patents_db(path: Path) -> Path:
    conn = sqlite3.connect(path)
    c = conn.cursor()
    c.executescript(
        """
        CREATE TABLE TECH_CLASS (patent_id INTEGER, field_code TEXT, description TEXT);
        CREATE TABLE FILING_INFO (patent_id INTEGER, filing_date TEXT);
        CREATE TABLE CITATION_RECORD (patent_id INTEGER, cited_patent_id INTEGER, cited_date TEXT);
        CREATE TABLE FOREIGN_REFS (patent_id INTEGER, ref_id TEXT, ref_country TEXT);
        CREATE TABLE APP_REFS (patent_id INTEGER, app_id TEXT);
        """
    )
    tech_rows = [
        (1, "MS-01", "Advanced materials for solar cells"),
        (2, "MS-02", "Composite materials in aerospace"),
        (3, "MS-03", "Nanostructured materials"),
        (4, "MS-04", "Ceramic materials processing"),
        (5, "MS-05", "Polymer materials synthesis"),
        (6, "MS-06", "Metallic materials coatings"),
        (7, "MS-07", "Biocompatible materials"),
        (8, "MS-08", "Semiconductor materials growth"),
        (9, "MS-09", "Magnetic materials devices"),
        (10, "EE-01", "Power electronics"),
        (11, "CH-02", "Catalytic chemistry"),
    ]
    c.executemany("INSERT INTO TECH_CLASS VALUES (?,?,?)", tech_rows)
    filings = [
        (1, "2014-01-15"),
        (2, "2014-02-20"),
        (3, "2014-03-03"),
        (4, "2014-03-28"),
        (10, "2014-02-01"),  # Q1 2014, not materials science
        (5, "2014-05-10"),
        (6, "2013-12-30"),
        (11, "2015-01-01"),
    ]
    c.executemany("INSERT INTO FILING_INFO VALUES (?,?)", filings)
    citations = [
        (1, 101, "2010-05-01"),
        (1, 102, "2011-06-01"),
        (2, 103, "2009-01-01"),
        (3, 104, "2012-02-02"),
        (3, 105, "2008-03-03"),
        (3, 106, "2013-04-04"),
        (4, 107, "2007-05-05"),
    ]
    c.executemany("INSERT INTO CITATION_RECORD VALUES (?,?,?)", citations)
    c.executemany(
        "INSERT INTO FOREIGN_REFS VALUES (?,?,?)",
        [(1, "FR-9", "FR"), (2, "JP-3", "JP"), (2, "DE-4", "DE"), (4, "GB-1", "GB")],
    )
    c.executemany("INSERT INTO APP_REFS VALUES (?,?)", [(1, "APP-1"), (3, "APP-2")])
    conn.commit()
    conn.close()
    return path


def make_misc_db(path: Path) -> Path:
    """Preprocessing/caps fixture: all-null columns, time-suffix groups, wide value sets."""
    conn = sqlite3.connect(path)
    c = conn.cursor()
    c.executescript(
        """
        CREATE TABLE EVENTS (id INTEGER, label TEXT, dead_col TEXT);
        CREATE TABLE EMPTY_TBL (a INTEGER, b TEXT);
        CREATE TABLE GA_SESSION_20240101 (visit_id INTEGER, pageviews INTEGER);
        CREATE TABLE GA_SESSION_20240202 (visit_id INTEGER, pageviews INTEGER);
        CREATE TABLE GA_OTHER_20240101 (visit_id INTEGER, clicks INTEGER, extra TEXT);
        CREATE TABLE WIDE_VALUES (code TEXT);
        CREATE TABLE BIG (n INTEGER);
        """
    )
    c.executemany(
        "INSERT INTO EVENTS VALUES (?,?,NULL)",
        [(1, "alpha"), (2, "beta"), (3, "gamma")],
    )
    c.executemany("INSERT INTO GA_SESSION_20240101 VALUES (?,?)", [(1, 5), (2, 7)])
    c.executemany("INSERT INTO GA_SESSION_20240202 VALUES (?,?)", [(3, 2)])
    c.executemany("INSERT INTO GA_OTHER_20240101 VALUES (?,?,?)", [(1, 4, "x")])
    c.executemany("INSERT INTO WIDE_VALUES VALUES (?)", [(f"V{i:03d}",) for i in range(120)])
    c.executemany("INSERT INTO BIG VALUES (?)", [(i,) for i in range(500)])
    conn.commit()
    conn.close()
    return path
