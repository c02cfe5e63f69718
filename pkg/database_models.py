"""
Database models - MOMA link-level simulator
Simulation runs, result rows and fixed-point diagnostics, kept apart from the
cache tables so every module can import them without cycles.
"""
from datetime import datetime

from sqlalchemy import Column, DateTime, Float, ForeignKey, Integer, String, Text, create_engine
from sqlalchemy.orm import declarative_base, relationship, sessionmaker

Base = declarative_base()

# ============================================
# MODELS
# ============================================

class SimulationRun(Base):
    __tablename__ = 'simulation_runs'

    id = Column(Integer, primary_key=True)
    command = Column(String(50), index=True)
    config_hash = Column(String(64), index=True)
    config_json = Column(Text)
    seed = Column(Integer)
    trials = Column(Integer)
    output_path = Column(String(500))
    elapsed_s = Column(Float)
    created_at = Column(DateTime, default=datetime.now)

    results = relationship('ResultRecord', back_populates='run', cascade='all, delete-orphan')
    fixed_points = relationship('FixedPointRecord', back_populates='run',
                                cascade='all, delete-orphan')


class ResultRecord(Base):
    __tablename__ = 'result_records'

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey('simulation_runs.id'), index=True)
    scheme = Column(String(50), index=True)
    antennas = Column(Integer)
    class_index = Column(Integer)
    user = Column(Integer, nullable=True)
    detector = Column(String(10))
    metric = Column(String(50))
    value = Column(Float)
    std_error = Column(Float)
    source = Column(String(30))

    run = relationship('SimulationRun', back_populates='results')


class FixedPointRecord(Base):
    __tablename__ = 'fixed_point_records'

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey('simulation_runs.id'), index=True)
    antennas = Column(Integer)
    class_index = Column(Integer)
    iterations = Column(Integer)
    residual = Column(Float)
    deltas = Column(Text)
    cond_i_minus_j = Column(Float)

    run = relationship('SimulationRun', back_populates='fixed_points')

# ============================================
# SESSION HELPER
# ============================================
def get_database_session(db_url: str = 'sqlite:///moma_results.db'):
    """Session bound to `db_url`, tables created on first use"""
    engine = create_engine(db_url, echo=False)
    Base.metadata.create_all(engine)
    Session = sessionmaker(bind=engine)
    return Session()
