"""
Database Models
SQLAlchemy models for the benchmark run registry
"""

from sqlalchemy import Column, Integer, String, Boolean, DateTime, Text, ForeignKey, Float
from sqlalchemy.orm import declarative_base, relationship, validates
from sqlalchemy.sql import func

Base = declarative_base()

RUN_STATUSES = ('running', 'completed', 'partial', 'failed')


class BenchmarkRun(Base):
    """One run_benchmark invocation"""
    __tablename__ = 'benchmark_runs'

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(String(100), unique=True, nullable=False, index=True)
    mode = Column(String(20), nullable=False)
    config_hash = Column(String(12), nullable=False, index=True)
    checkpoint = Column(String(500))
    seed = Column(Integer, default=0, nullable=False)
    created_at = Column(DateTime, default=func.now(), nullable=False)
    finished_at = Column(DateTime)
    status = Column(String(20), default='running', nullable=False)
    success_auc = Column(Float)
    precision = Column(Float)
    sequence_count = Column(Integer, default=0, nullable=False)
    failure_count = Column(Integer, default=0, nullable=False)

    # Relationships
    sequences = relationship('SequenceResult', back_populates='run', cascade='all, delete-orphan')

    @validates('status')
    def validate_status(self, key, status):
        if status not in RUN_STATUSES:
            raise ValueError(f'Status must be one of {", ".join(RUN_STATUSES)}')
        return status

    def to_dict(self) -> dict:
        return {
            'run_id': self.run_id,
            'mode': self.mode,
            'config_hash': self.config_hash,
            'checkpoint': self.checkpoint,
            'seed': self.seed,
            'created_at': self.created_at.isoformat() if self.created_at else None,
            'status': self.status,
            'success_auc': self.success_auc,
            'precision': self.precision,
            'sequence_count': self.sequence_count,
            'failure_count': self.failure_count,
        }

    def __repr__(self):
        return f"<BenchmarkRun(run_id='{self.run_id}', mode='{self.mode}', status='{self.status}')>"


class SequenceResult(Base):
    """Per-sequence outcome of a benchmark run"""
    __tablename__ = 'sequence_results'

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_pk = Column(Integer, ForeignKey('benchmark_runs.id'), nullable=False, index=True)
    sequence_id = Column(String(200), nullable=False)
    success_auc = Column(Float)
    precision = Column(Float)
    frames = Column(Integer, default=0, nullable=False)
    updates = Column(Integer, default=0, nullable=False)
    failed = Column(Boolean, default=False, nullable=False)
    error = Column(Text)

    run = relationship('BenchmarkRun', back_populates='sequences')

    def __repr__(self):
        return f"<SequenceResult(sequence_id='{self.sequence_id}', failed={self.failed})>"
