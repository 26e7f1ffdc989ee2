from fastapi import APIRouter, Depends, HTTPException
from sqlalchemy.orm import Session

from ..db import get_db
from ..models import CalibrationEntry
from ..schemas import CalibrationEntryOut, CalibrationEntryUpdate
from ..seed import load_calibration
from ..splitlock import reference_deltas

router = APIRouter(prefix="/calibration", tags=["calibration"])


@router.get("", response_model=list[CalibrationEntryOut])
def list_entries(section: str | None = None, db: Session = Depends(get_db)):
    q = db.query(CalibrationEntry)
    if section:
        q = q.filter(CalibrationEntry.section == section)
    return q.order_by(
        CalibrationEntry.section,
        CalibrationEntry.mode,
        CalibrationEntry.variant,
        CalibrationEntry.role,
        CalibrationEntry.position,
    ).all()


@router.get("/reference")
def reference(db: Session = Depends(get_db)):
    return reference_deltas(load_calibration(db))


@router.put("/{entry_id}", response_model=CalibrationEntryOut)
def update_entry(entry_id: int, payload: CalibrationEntryUpdate, db: Session = Depends(get_db)):
    entry = db.get(CalibrationEntry, entry_id)
    if not entry:
        raise HTTPException(404, "Calibration entry not found")
    entry.cycles = payload.cycles
    db.commit()
    db.refresh(entry)
    return entry
