"""
Run ledger: SQLAlchemy models and session setup for nlwg runs
"""
from sqlalchemy import create_engine, Column, Integer, String, Text, Float, DateTime, JSON
from sqlalchemy.ext.declarative import declarative_base
from sqlalchemy.orm import sessionmaker
from datetime import datetime
import logging

from nlwg.config import settings

logger = logging.getLogger(__name__)

Base = declarative_base()


class Run(Base):
    """One CLI invocation"""
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True)
    command = Column(String(50), nullable=False)  # 'dataset', 'train', 'finetune', 'optimize', 'analyze'
    seed = Column(String(32))  # u64 does not fit every backend's integer
    config = Column(JSON)  # resolved RunConfig
    out_dir = Column(String(1000))
    status = Column(String(50), default='running')  # 'running', 'success', 'error'
    message = Column(Text, nullable=True)

    started_at = Column(DateTime, default=datetime.utcnow)
    finished_at = Column(DateTime, nullable=True)


class TrajectoryPointRow(Base):
    """Optimizer iteration, mirrors the trajectory CSV"""
    __tablename__ = "trajectory_points"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(Integer, nullable=False, index=True)
    iteration = Column(Integer, nullable=False)

    fom_surrogate = Column(Float)  # pm/V
    fom_reference = Column(Float, nullable=True)  # pm/V, audited iterations only
    rel_discrepancy = Column(Float, nullable=True)
    theta_deg = Column(Float, nullable=True)
    model_version = Column(Integer)
    design_hash = Column(String(64))
    note = Column(String(200), default='')

    created_at = Column(DateTime, default=datetime.utcnow)


class SurrogateVersion(Base):
    """Checkpoint written by train / finetune / an optimizer fine-tune"""
    __tablename__ = "surrogate_versions"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(Integer, nullable=True)
    polarization = Column(String(2), nullable=False)  # 'TE', 'TM'
    version = Column(Integer, nullable=False)
    epochs = Column(Integer)
    final_mse = Column(Float, nullable=True)
    dataset_id = Column(String(64))
    checkpoint_path = Column(String(1000), nullable=True)

    created_at = Column(DateTime, default=datetime.utcnow)


# Database setup
engine = create_engine(
    settings.database_url,
    connect_args={"check_same_thread": False} if "sqlite" in settings.database_url else {}
)

SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)


def init_db():
    """Initialize database tables"""
    Base.metadata.create_all(bind=engine)


def get_db():
    """Get database session"""
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()


def start_run(db, command: str, seed: int, config: dict, out_dir: str) -> Run:
    run = Run(command=command, seed=str(seed), config=config, out_dir=out_dir)
    db.add(run)
    db.commit()
    db.refresh(run)
    logger.info(f"Run #{run.id} started: {command} -> {out_dir}")
    return run


def finish_run(db, run: Run, status: str, message: str | None = None) -> None:
    run.status = status
    run.message = message
    run.finished_at = datetime.utcnow()
    db.commit()


def record_trajectory_point(db, run_id: int, point) -> None:
    """Store a TrajectoryPoint"""
    db.add(TrajectoryPointRow(
        run_id=run_id,
        iteration=point.iter,
        fom_surrogate=point.fom_surrogate_pmV,
        fom_reference=point.fom_reference_pmV,
        rel_discrepancy=point.rel_discrepancy,
        theta_deg=point.theta_deg,
        model_version=point.model_version,
        design_hash=point.design_hash,
        note=point.note,
    ))
    db.commit()


def record_surrogate_version(db, run_id: int | None, metadata, checkpoint_path: str | None) -> None:
    """Store a SurrogateMetadata snapshot"""
    db.add(SurrogateVersion(
        run_id=run_id,
        polarization=metadata.polarization,
        version=metadata.version,
        epochs=metadata.epochs,
        final_mse=metadata.final_mse,
        dataset_id=metadata.dataset_id,
        checkpoint_path=checkpoint_path,
    ))
    db.commit()
