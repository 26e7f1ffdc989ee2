import enum
from datetime import datetime

from sqlalchemy import (
    JSON,
    Boolean,
    DateTime,
    Enum,
    ForeignKey,
    Index,
    Integer,
    String,
    UniqueConstraint,
)
from sqlalchemy.orm import Mapped, mapped_column, relationship

from .db import Base


class RunKind(str, enum.Enum):
    FUNCTIONAL = "FUNCTIONAL"
    CALIBRATED = "CALIBRATED"


class SimulationRun(Base):
    __tablename__ = "simulation_runs"
    __table_args__ = (Index("ix_runs_digest_seed", "config_digest", "seed"),)

    id: Mapped[int] = mapped_column(Integer, primary_key=True)
    config_digest: Mapped[str] = mapped_column(String(64), nullable=False)
    seed: Mapped[int] = mapped_column(Integer, nullable=False, default=0)
    mode: Mapped[str] = mapped_column(String(20), nullable=False)
    kind: Mapped[RunKind] = mapped_column(Enum(RunKind), default=RunKind.FUNCTIONAL, nullable=False)

    cycles: Mapped[int] = mapped_column(Integer, nullable=False)
    retired: Mapped[int] = mapped_column(Integer, nullable=False, default=0)
    result_digest: Mapped[str] = mapped_column(String(64), nullable=False)
    result_correct: Mapped[bool] = mapped_column(Boolean, nullable=False)
    recoveries: Mapped[int] = mapped_column(Integer, nullable=False, default=0)

    # full JSON report as written by the CLI
    report: Mapped[dict] = mapped_column(JSON, nullable=False)

    created_at: Mapped[datetime] = mapped_column(DateTime, default=datetime.utcnow, nullable=False)


class Campaign(Base):
    __tablename__ = "campaigns"

    id: Mapped[int] = mapped_column(Integer, primary_key=True)
    config_digest: Mapped[str] = mapped_column(String(64), nullable=False, index=True)
    mode: Mapped[str] = mapped_column(String(20), nullable=False)
    runs: Mapped[int] = mapped_column(Integer, nullable=False)
    seed: Mapped[int] = mapped_column(Integer, nullable=False, default=0)
    golden_cycles: Mapped[int] = mapped_column(Integer, nullable=False)

    masked: Mapped[int] = mapped_column(Integer, default=0, nullable=False)
    detected_recovered: Mapped[int] = mapped_column(Integer, default=0, nullable=False)
    sdc: Mapped[int] = mapped_column(Integer, default=0, nullable=False)
    hang: Mapped[int] = mapped_column(Integer, default=0, nullable=False)
    report_hash: Mapped[str] = mapped_column(String(64), nullable=False)

    created_at: Mapped[datetime] = mapped_column(DateTime, default=datetime.utcnow, nullable=False)

    records: Mapped[list["FaultRecord"]] = relationship(
        back_populates="campaign",
        cascade="all, delete-orphan",
        order_by="FaultRecord.run_index",
    )


class FaultRecord(Base):
    __tablename__ = "fault_records"
    __table_args__ = (UniqueConstraint("campaign_id", "run_index", name="uq_fault_records_run"),)

    id: Mapped[int] = mapped_column(Integer, primary_key=True)
    campaign_id: Mapped[int] = mapped_column(Integer, ForeignKey("campaigns.id"), nullable=False, index=True)
    run_index: Mapped[int] = mapped_column(Integer, nullable=False)
    seed: Mapped[int] = mapped_column(Integer, nullable=False)
    event: Mapped[dict] = mapped_column(JSON, nullable=False)
    outcome: Mapped[str] = mapped_column(String(30), nullable=False)
    cycles: Mapped[int] = mapped_column(Integer, nullable=False)
    recovery_cycles: Mapped[int] = mapped_column(Integer, default=0, nullable=False)

    campaign: Mapped[Campaign] = relationship(back_populates="records")


class CalibrationEntry(Base):
    __tablename__ = "calibration_entries"
    __table_args__ = (
        UniqueConstraint("section", "mode", "variant", "role", "phase", name="uq_calibration_phase"),
    )

    id: Mapped[int] = mapped_column(Integer, primary_key=True)
    section: Mapped[str] = mapped_column(String(20), nullable=False)
    mode: Mapped[str] = mapped_column(String(10), nullable=False)
    variant: Mapped[str] = mapped_column(String(10), nullable=False)
    role: Mapped[str] = mapped_column(String(10), nullable=False, default="main")
    phase: Mapped[str] = mapped_column(String(20), nullable=False)
    position: Mapped[int] = mapped_column(Integer, nullable=False, default=0)
    cycles: Mapped[int] = mapped_column(Integer, nullable=False)
