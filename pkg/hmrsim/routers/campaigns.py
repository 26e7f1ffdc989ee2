from fastapi import APIRouter, Depends, HTTPException
from sqlalchemy.orm import Session

from .. import runner
from ..db import get_db
from ..errors import HmrSimError
from ..faults import run_campaign
from ..models import Campaign, FaultRecord
from ..schemas import CampaignCreate, CampaignDetailOut, CampaignOut

router = APIRouter(prefix="/campaigns", tags=["campaigns"])


@router.post("", response_model=CampaignOut, status_code=201)
def create_campaign(payload: CampaignCreate, db: Session = Depends(get_db)):
    cfg = payload.scenario
    try:
        runner.require_workload(cfg)
        report = run_campaign(cfg)
    except HmrSimError as exc:
        raise HTTPException(400, str(exc))

    campaign = Campaign(
        config_digest=cfg.digest(),
        mode=report.mode,
        runs=report.runs,
        seed=report.seed,
        golden_cycles=report.golden_cycles,
        masked=report.outcomes["masked"],
        detected_recovered=report.outcomes["detected_recovered"],
        sdc=report.outcomes["sdc"],
        hang=report.outcomes["hang"],
        report_hash=report.report_hash,
    )
    campaign.records = [
        FaultRecord(
            run_index=r.run_index,
            seed=r.seed,
            event=r.event.as_dict(),
            outcome=r.outcome.value,
            cycles=r.cycles,
            recovery_cycles=r.recovery_cycles,
        )
        for r in report.records
    ]
    db.add(campaign)
    db.commit()
    db.refresh(campaign)
    return campaign


@router.get("", response_model=list[CampaignOut])
def list_campaigns(db: Session = Depends(get_db)):
    return db.query(Campaign).order_by(Campaign.id.desc()).all()


@router.get("/{campaign_id}", response_model=CampaignDetailOut)
def get_campaign(campaign_id: int, db: Session = Depends(get_db)):
    campaign = db.get(Campaign, campaign_id)
    if not campaign:
        raise HTTPException(404, "Campaign not found")
    return campaign
