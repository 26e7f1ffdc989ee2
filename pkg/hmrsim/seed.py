from __future__ import annotations

import logging

from sqlalchemy import text
from sqlalchemy.orm import Session

from .models import CalibrationEntry
from .splitlock import CalibrationTable

log = logging.getLogger(__name__)

TCLS_SECTION = "tcls_sw"


# -------------------------
# SQLite auto-migrations
# -------------------------


def _is_sqlite(db: Session) -> bool:
    dialect = db.bind.dialect.name if db.bind else ""
    return dialect == "sqlite"


def _sqlite_table_columns(db: Session, table_name: str) -> set[str]:
    cols = db.execute(text(f"PRAGMA table_info({table_name})")).fetchall()
    return {c[1] for c in cols}  # c[1] = column name


def _sqlite_add_missing_calibration_columns(db: Session) -> None:
    if not _is_sqlite(db):
        return

    existing = _sqlite_table_columns(db, "calibration_entries")
    if "position" not in existing:
        db.execute(text("ALTER TABLE calibration_entries ADD COLUMN position INTEGER"))
        db.commit()
        db.execute(text("UPDATE calibration_entries SET position = COALESCE(position, id)"))
        db.commit()


# -------------------------
# calibration profile
# -------------------------


def _default_rows(table: CalibrationTable) -> list[CalibrationEntry]:
    rows = [
        CalibrationEntry(section=s, mode=m, variant=v, role=r, phase=p, position=i, cycles=c)
        for (s, m, v, r), phases in sorted(table.entries.items())
        for i, (p, c) in enumerate(phases)
    ]
    rows.append(CalibrationEntry(section=TCLS_SECTION, mode="tmr", variant="sw", role="main",
                                 phase="unload", position=0, cycles=table.tcls_unload))
    rows.append(CalibrationEntry(section=TCLS_SECTION, mode="tmr", variant="sw", role="main",
                                 phase="reload", position=1, cycles=table.tcls_reload))
    return rows


def ensure_calibration(db: Session) -> int:
    """Insert the default calibration profile when the table is empty."""
    _sqlite_add_missing_calibration_columns(db)
    if db.query(CalibrationEntry).first():
        return 0
    rows = _default_rows(CalibrationTable())
    db.add_all(rows)
    db.commit()
    log.info("seeded %d calibration phases", len(rows))
    return len(rows)


def load_calibration(db: Session) -> CalibrationTable:
    """Calibration table as currently stored; the defaults fill any gaps."""
    table = CalibrationTable()
    stored: dict[tuple[str, str, str, str], list[tuple[int, str, int]]] = {}
    for e in db.query(CalibrationEntry).all():
        if e.section == TCLS_SECTION:
            if e.phase == "unload":
                table.tcls_unload = e.cycles
            elif e.phase == "reload":
                table.tcls_reload = e.cycles
            continue
        stored.setdefault((e.section, e.mode, e.variant, e.role), []).append((e.position, e.phase, e.cycles))
    for key, phases in stored.items():
        table.entries[key] = [(p, c) for _, p, c in sorted(phases)]
    return table


def ensure_seed(db: Session) -> None:
    ensure_calibration(db)
