# creates connection to the run registry - every datatype we store is listed here
from sqlalchemy import create_engine, Column, Integer, String, DateTime, Boolean, Float, Index
# base class that models inherit from
from sqlalchemy.orm import declarative_base, sessionmaker
from datetime import datetime
import logging

from config import CAMPC_DATABASE_URL

"""
Run registry on SQLAlchemy
    - one row per simulated variant, per sweep point and per verify run
    - best effort: a failing write is logged and rolled back, the command carries on
"""

logger = logging.getLogger(__name__)

# acts as registry for all the tables
Base = declarative_base()


class Run(Base):
    __tablename__ = 'runs'

    id = Column(Integer, primary_key=True)
    config_checksum = Column(String(64), nullable=False)
    problem_checksum = Column(String(64), nullable=False)
    variant = Column(String(10), nullable=False)
    n_v = Column(Integer, nullable=False)
    N = Column(Integer, nullable=False)
    steps = Column(Integer, nullable=False)
    max_step_time_us = Column(Float)
    median_step_time_us = Column(Float)
    average_retained_percent = Column(Float)
    violations = Column(Integer, default=0)
    infeasible_steps = Column(Integer, default=0)
    halted = Column(Boolean, default=False)
    created_at = Column(DateTime, default=datetime.now)

    # runs are looked up by config, then by variant
    __table_args__ = (
        Index('idx_run_config_variant', 'config_checksum', 'variant'),
    )


class SweepPoint(Base):
    __tablename__ = 'sweep_points'

    id = Column(Integer, primary_key=True)
    config_checksum = Column(String(64), nullable=False)
    n_v = Column(Integer, nullable=False)
    variant = Column(String(10), nullable=False)
    total_constraints = Column(Integer, nullable=False)
    max_step_time_us = Column(Float)
    max_index_time_us = Column(Float)
    max_qp_time_us = Column(Float)
    error = Column(String(500))
    created_at = Column(DateTime, default=datetime.now)

    __table_args__ = (
        Index('idx_sweep_config_nv', 'config_checksum', 'n_v'),
    )


class VerifyRun(Base):
    __tablename__ = 'verify_runs'

    id = Column(Integer, primary_key=True)
    seed = Column(Integer, nullable=False)
    cases = Column(Integer, nullable=False)
    suite = Column(String(40), nullable=False)
    passed = Column(Integer, default=0)
    failed = Column(Integer, default=0)
    skipped = Column(Integer, default=0)
    created_at = Column(DateTime, default=datetime.now)


def _as_dict(row):
    return {c.name: getattr(row, c.name) for c in row.__table__.columns}


# this class is where the commands interact with the registry
class DatabaseManager:
    def __init__(self, database_url=CAMPC_DATABASE_URL):
        # translates python to SQL
        self.engine = create_engine(database_url, echo=False)
        self.SessionLocal = sessionmaker(bind=self.engine)
        # creating all tables if they dont exist yet
        Base.metadata.create_all(bind=self.engine)

    def get_session(self):
        return self.SessionLocal()

    def _add(self, rows, what):
        with self.get_session() as session:
            try:
                session.add_all(rows)
                session.commit()
                return True
            except Exception as e:
                logger.error("Error recording %s: %s", what, e)
                # undo changes made in this session
                session.rollback()
                return False

    # Runs
    def record_run(self, config_checksum, problem_checksum, n_v, N, summary):
        row = Run(
            config_checksum=config_checksum,
            problem_checksum=problem_checksum,
            variant=summary["variant"],
            n_v=n_v,
            N=N,
            steps=summary["steps"],
            max_step_time_us=summary["max_step_time_us"],
            median_step_time_us=summary["median_step_time_us"],
            average_retained_percent=summary["average_retained_percent"],
            violations=summary["violations"],
            infeasible_steps=summary["infeasible_steps"],
            halted=summary["halted"],
        )
        return self._add([row], "run")

    def recent_runs(self, limit=10):
        with self.get_session() as session:
            try:
                rows = session.query(Run).order_by(Run.id.desc()).limit(limit).all()
                return [_as_dict(r) for r in rows]
            except Exception as e:
                logger.error("Error reading runs: %s", e)
                return []

    # Sweep points
    def record_sweep_point(self, config_checksum, point):
        row = SweepPoint(
            config_checksum=config_checksum,
            n_v=point["n_v"],
            variant=point["variant"],
            total_constraints=point["total_constraints"],
            max_step_time_us=point.get("max_step_time_us"),
            max_index_time_us=point.get("max_index_time_us"),
            max_qp_time_us=point.get("max_qp_time_us"),
            error=(point.get("error") or None) and str(point["error"])[:500],
        )
        return self._add([row], "sweep point")

    def recent_sweep_points(self, limit=20):
        with self.get_session() as session:
            try:
                rows = session.query(SweepPoint).order_by(SweepPoint.id.desc()).limit(limit).all()
                return [_as_dict(r) for r in rows]
            except Exception as e:
                logger.error("Error reading sweep points: %s", e)
                return []

    # Verify runs - one row per suite
    def record_verify(self, seed, cases, suites):
        rows = [
            VerifyRun(seed=seed, cases=cases, suite=s["name"], passed=s["passed"],
                      failed=s["failed"], skipped=s["skipped"])
            for s in suites
        ]
        return self._add(rows, "verify run")

    def recent_verify_runs(self, limit=10):
        with self.get_session() as session:
            try:
                rows = session.query(VerifyRun).order_by(VerifyRun.id.desc()).limit(limit).all()
                return [_as_dict(r) for r in rows]
            except Exception as e:
                logger.error("Error reading verify runs: %s", e)
                return []


_managers = {}


def get_db_manager(database_url=None):
    """One manager per url, created on first use so importing this file never touches disk."""
    url = database_url or CAMPC_DATABASE_URL
    if url not in _managers:
        try:
            _managers[url] = DatabaseManager(url)
        except Exception as e:
            logger.error("Run registry unavailable at %s: %s", url, e)
            return None
    return _managers[url]
