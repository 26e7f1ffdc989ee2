from fastapi import APIRouter, Depends, HTTPException
from sqlalchemy.orm import Session

from .. import runner
from ..db import get_db
from ..errors import HmrSimError
from ..models import RunKind, SimulationRun
from ..schemas import RunCreate, RunDetailOut, RunOut
from ..seed import load_calibration

router = APIRouter(prefix="/runs", tags=["runs"])


@router.post("", response_model=RunDetailOut, status_code=201)
def create_run(payload: RunCreate, db: Session = Depends(get_db)):
    cfg = payload.scenario
    table = load_calibration(db) if payload.calibrated else None
    try:
        runner.require_workload(cfg)
        result = runner.simulate(cfg, payload.calibrated, table)
    except HmrSimError as exc:
        raise HTTPException(400, str(exc))

    run = SimulationRun(
        config_digest=cfg.digest(),
        seed=cfg.seed,
        mode=cfg.cluster.boot_mode.value,
        kind=RunKind.CALIBRATED if payload.calibrated else RunKind.FUNCTIONAL,
        cycles=result.cycles,
        retired=result.retired,
        result_digest=result.result_digest,
        result_correct=result.result_correct,
        recoveries=len(result.recoveries),
        report=runner.run_report(cfg, result, payload.calibrated, table),
    )
    db.add(run)
    db.commit()
    db.refresh(run)
    return run


@router.get("", response_model=list[RunOut])
def list_runs(limit: int = 50, db: Session = Depends(get_db)):
    return db.query(SimulationRun).order_by(SimulationRun.id.desc()).limit(limit).all()


@router.get("/{run_id}", response_model=RunDetailOut)
def get_run(run_id: int, db: Session = Depends(get_db)):
    run = db.get(SimulationRun, run_id)
    if not run:
        raise HTTPException(404, "Run not found")
    return run
