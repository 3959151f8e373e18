"""
Database Package
Run registry: engine setup, session lifecycle and benchmark bookkeeping
"""

from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional
import logging

from sqlalchemy import create_engine, event
from sqlalchemy.orm import sessionmaker, scoped_session
from sqlalchemy.pool import StaticPool

from siamadapt.database.models import Base, BenchmarkRun, SequenceResult

logger = logging.getLogger(__name__)

REGISTRY_FILE = 'registry.db'


class RegistryManager:
    """Manages registry connections, sessions and schema creation"""

    def __init__(self, database_url: Optional[str] = None, results_root: Optional[Path] = None,
                 echo: bool = False):
        """
        Initialize registry manager

        Args:
            database_url: SQLAlchemy database URL (default: SQLite file under the results root)
            results_root: Directory holding the default SQLite file
            echo: Enable SQL query logging
        """
        if database_url is None:
            root = Path(results_root) if results_root is not None else Path('results')
            root.mkdir(parents=True, exist_ok=True)
            database_url = f'sqlite:///{root / REGISTRY_FILE}'

        self.database_url = database_url
        if database_url.startswith('sqlite'):
            self.engine = create_engine(
                database_url,
                echo=echo,
                connect_args={'check_same_thread': False},
                poolclass=StaticPool
            )
            event.listen(self.engine, 'connect', self._set_sqlite_pragma)
        else:
            self.engine = create_engine(database_url, echo=echo, pool_pre_ping=True)

        self.session_factory = sessionmaker(bind=self.engine, expire_on_commit=False)
        self.Session = scoped_session(self.session_factory)
        Base.metadata.create_all(self.engine)
        logger.debug(f"Registry initialized: {database_url}")

    def _set_sqlite_pragma(self, dbapi_conn, connection_record):
        """Enable foreign keys for SQLite"""
        cursor = dbapi_conn.cursor()
        cursor.execute("PRAGMA foreign_keys=ON")
        cursor.close()

    @contextmanager
    def session_scope(self):
        """
        Context manager for registry sessions

        Usage:
            with registry.session_scope() as session:
                run = session.query(BenchmarkRun).first()
        """
        session = self.Session()
        try:
            yield session
            session.commit()
        except Exception as e:
            session.rollback()
            logger.error(f"Registry session error: {e}")
            raise
        finally:
            session.close()

    def start_run(self, run_id: str, mode: str, config_hash: str, checkpoint: Optional[str] = None,
                  seed: int = 0) -> None:
        """Register a run, replacing a previous record with the same id"""
        with self.session_scope() as session:
            existing = session.query(BenchmarkRun).filter_by(run_id=run_id).first()
            if existing is not None:
                session.delete(existing)
                session.flush()
            session.add(BenchmarkRun(run_id=run_id, mode=mode, config_hash=config_hash,
                                     checkpoint=checkpoint, seed=seed, status='running'))

    def finish_run(self, run_id: str, summary: dict, sequences: List[dict]) -> None:
        """Store aggregate and per-sequence results of a finished run"""
        with self.session_scope() as session:
            run = session.query(BenchmarkRun).filter_by(run_id=run_id).one()
            failures = sum(1 for row in sequences if row.get('failed'))
            run.success_auc = summary.get('success_auc')
            run.precision = summary.get('precision')
            run.sequence_count = len(sequences)
            run.failure_count = failures
            run.finished_at = datetime.now(timezone.utc)
            if failures == 0:
                run.status = 'completed'
            elif failures < len(sequences):
                run.status = 'partial'
            else:
                run.status = 'failed'
            for row in sequences:
                run.sequences.append(SequenceResult(
                    sequence_id=row['sequence'],
                    success_auc=row.get('success_auc'),
                    precision=row.get('precision'),
                    frames=row.get('frames', 0),
                    updates=row.get('updates', 0),
                    failed=bool(row.get('failed')),
                    error=row.get('error'),
                ))
        logger.info(f"[OK] Run {run_id} registered ({run.status})")

    def get_run(self, run_id: str) -> Optional[dict]:
        with self.session_scope() as session:
            run = session.query(BenchmarkRun).filter_by(run_id=run_id).first()
            return run.to_dict() if run is not None else None

    def list_runs(self) -> List[dict]:
        with self.session_scope() as session:
            return [run.to_dict() for run in session.query(BenchmarkRun).order_by(BenchmarkRun.id)]

    def close(self):
        """Close all registry connections"""
        self.Session.remove()
        self.engine.dispose()
        logger.debug("Registry connections closed")


__all__ = ['RegistryManager', 'BenchmarkRun', 'SequenceResult', 'Base']
