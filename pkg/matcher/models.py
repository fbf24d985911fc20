from sqlalchemy import JSON, Column, ForeignKey, Integer, String
from sqlalchemy.orm import declarative_base

Base = declarative_base()

class RunRecord(Base):
    __tablename__ = "runs"
    id = Column(String, primary_key=True)
    status = Column(String)  # RUNNING, COMPLETE, PARTIAL
    started_at = Column(String)
    finished_at = Column(String, nullable=True)
    manifest = Column(JSON)  # RunManifest snapshot

class PairRecord(Base):
    __tablename__ = "pairs"
    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(String, ForeignKey("runs.id"), index=True)
    patient_id = Column(String)
    trial_id = Column(String)
    status = Column(String)  # COMPLETE, INCOMPLETE
    error = Column(String, nullable=True)
