# matcher/database.py
import os
from contextlib import contextmanager
from pathlib import Path
from typing import List, Optional

from sqlalchemy import create_engine, select
from sqlalchemy.orm import sessionmaker

from matcher.models import Base, PairRecord, RunRecord

def ledger_url(workdir: Path) -> str:
    return os.getenv("RUN_LEDGER_URL", f"sqlite:///{Path(workdir).resolve() / 'runs.db'}")

class RunLedger:
    """Run and pair status, so runs can be listed, reported on and resumed."""

    def __init__(self, url: str):
        if url.startswith("sqlite:///") and url != "sqlite:///:memory:":
            Path(url[len("sqlite:///"):]).parent.mkdir(parents=True, exist_ok=True)
        self.engine = create_engine(url)
        Base.metadata.create_all(self.engine)
        self.SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=self.engine,
                                         expire_on_commit=False)

    @contextmanager
    def session(self):
        db = self.SessionLocal()
        try:
            yield db
            db.commit()
        except Exception:
            db.rollback()
            raise
        finally:
            db.close()

    def start_run(self, run_id: str, started_at: str, manifest: dict):
        with self.session() as db:
            run = db.get(RunRecord, run_id)
            if run is None:
                db.add(RunRecord(id=run_id, status="RUNNING", started_at=started_at, manifest=manifest))
            else:
                run.status = "RUNNING"
                run.manifest = manifest

    def record_pair(self, run_id: str, patient_id: str, trial_id: str, status: str,
                    error: Optional[str] = None):
        with self.session() as db:
            existing = db.execute(select(PairRecord).where(
                PairRecord.run_id == run_id, PairRecord.patient_id == patient_id,
                PairRecord.trial_id == trial_id)).scalar_one_or_none()
            if existing is None:
                db.add(PairRecord(run_id=run_id, patient_id=patient_id, trial_id=trial_id,
                                  status=status, error=error))
            else:
                existing.status = status
                existing.error = error

    def finish_run(self, run_id: str, status: str, finished_at: str, manifest: dict):
        with self.session() as db:
            run = db.get(RunRecord, run_id)
            run.status = status
            run.finished_at = finished_at
            run.manifest = manifest

    def get_run(self, run_id: str) -> Optional[RunRecord]:
        with self.session() as db:
            return db.get(RunRecord, run_id)

    def latest_run(self) -> Optional[RunRecord]:
        with self.session() as db:
            return db.execute(select(RunRecord).order_by(RunRecord.started_at.desc())).scalars().first()

    def pairs(self, run_id: str) -> List[PairRecord]:
        with self.session() as db:
            return list(db.execute(select(PairRecord).where(PairRecord.run_id == run_id)
                                   .order_by(PairRecord.patient_id, PairRecord.trial_id)).scalars())

    def close(self):
        self.engine.dispose()
