"""
Monte Carlo result cache - MOMA link-level simulator
Stores the per-trial SINR matrix of a (scenario, scheme, M, K, seed, trials)
point so repeated sweeps and the capacity search reuse earlier work.
"""
import hashlib
import json
import logging
from datetime import datetime, timedelta
from typing import Any, Dict, Optional

import numpy as np
from sqlalchemy import Boolean, Column, DateTime, Integer, String, Text, create_engine
from sqlalchemy.exc import OperationalError
from sqlalchemy.orm import declarative_base, sessionmaker
from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_exponential

logging.getLogger('sqlalchemy.engine').setLevel(logging.ERROR)

logger = logging.getLogger(__name__)
Base = declarative_base()

# ============================================
# CACHE MODEL
# ============================================
class CachedSinr(Base):
    """Per-trial, per-user SINRs of one Monte Carlo point"""
    __tablename__ = 'cached_sinr'

    id = Column(Integer, primary_key=True)
    point_hash = Column(String(64), unique=True, index=True)
    description = Column(String(500))
    scheme = Column(String(50), index=True)

    gammas = Column(Text)  # JSON list of trials, each a list of per-user SINRs
    n_trials = Column(Integer)
    n_users = Column(Integer)

    hit_count = Column(Integer, default=0)
    last_hit = Column(DateTime)
    created_at = Column(DateTime, default=datetime.now)
    expires_at = Column(DateTime)
    is_valid = Column(Boolean, default=True)


def point_key(**parts: Any) -> str:
    """SHA-256 of the canonical JSON of the point description"""
    canonical = json.dumps(parts, sort_keys=True, separators=(',', ':'), default=str)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


# ============================================
# CACHE MANAGER
# ============================================
class CacheManager:
    """SQLite-backed cache of Monte Carlo SINR matrices"""

    def __init__(self, db_url: str = 'sqlite:///moma_results.db', ttl_days: int = 30):
        self.ttl_days = ttl_days
        engine = create_engine(db_url, echo=False)
        Base.metadata.create_all(engine)
        Session = sessionmaker(bind=engine)
        self.session = Session()
        self.hits = 0
        self.misses = 0

        logger.info(f"✅ Cache Manager ready (TTL: {ttl_days} days)")

    @retry(
        stop=stop_after_attempt(3),
        wait=wait_exponential(multiplier=0.2, min=0.2, max=2),
        retry=retry_if_exception_type(OperationalError),
        reraise=True,
    )
    def _commit(self):
        try:
            self.session.commit()
        except OperationalError:
            self.session.rollback()
            raise

    def get_gammas(self, key: str) -> Optional[np.ndarray]:
        """trials x users SINR matrix, or None on a miss"""
        try:
            cached = self.session.query(CachedSinr).filter_by(point_hash=key, is_valid=True).first()

            if cached is None:
                self.misses += 1
                return None

            if cached.expires_at and datetime.now() > cached.expires_at:
                logger.info("⏰ Cache entry expired")
                self.misses += 1
                return None

            cached.hit_count += 1
            cached.last_hit = datetime.now()
            self._commit()
            self.hits += 1

            gammas = np.asarray(json.loads(cached.gammas), dtype=float)
            logger.debug(f"Cache HIT {key[:8]} (used {cached.hit_count}x)")
            return gammas.reshape(cached.n_trials, cached.n_users)

        except Exception as e:
            logger.error(f"❌ Cache lookup failed: {e}")
            return None

    def save_gammas(self, key: str, gammas: np.ndarray, scheme: str = '', description: str = ''):
        try:
            gammas = np.atleast_2d(np.asarray(gammas, dtype=float))
            cached = self.session.query(CachedSinr).filter_by(point_hash=key).first()
            if cached is None:
                cached = CachedSinr(point_hash=key)
                self.session.add(cached)

            cached.description = description[:500]
            cached.scheme = scheme
            cached.gammas = json.dumps(gammas.tolist())
            cached.n_trials, cached.n_users = gammas.shape
            cached.is_valid = True
            cached.expires_at = datetime.now() + timedelta(days=self.ttl_days)
            self._commit()

            logger.debug(f"💾 Cached {gammas.shape[0]} trials for {scheme} ({key[:8]})")

        except Exception as e:
            self.session.rollback()
            logger.error(f"❌ Could not save cache entry: {e}")

    # ==========================================
    # STATS AND CLEANUP
    # ==========================================
    def get_cache_stats(self) -> Dict[str, Any]:
        try:
            total = self.session.query(CachedSinr).count()
            reused = self.session.query(CachedSinr).filter(CachedSinr.hit_count > 0).count()
            lookups = self.hits + self.misses
            return {
                'points_cached': total,
                'points_reused': reused,
                'session_hits': self.hits,
                'session_misses': self.misses,
                'hit_rate': round(self.hits / lookups * 100, 1) if lookups else 0.0,
            }
        except Exception as e:
            logger.error(f"❌ Could not read cache stats: {e}")
            return {}

    def clean_expired_cache(self) -> int:
        try:
            expired = self.session.query(CachedSinr).filter(
                CachedSinr.expires_at < datetime.now()
            ).all()
            for item in expired:
                self.session.delete(item)
            self._commit()

            logger.info(f"🧹 Cache cleaned: {len(expired)} entries removed")
            return len(expired)

        except Exception as e:
            self.session.rollback()
            logger.error(f"❌ Could not clean cache: {e}")
            return 0

    def invalidate(self, key: str):
        try:
            cached = self.session.query(CachedSinr).filter_by(point_hash=key).first()
            if cached:
                cached.is_valid = False
                self._commit()
                logger.info(f"Cache entry invalidated: {key[:8]}")
        except Exception as e:
            self.session.rollback()
            logger.error(f"❌ Could not invalidate cache entry: {e}")

    def clear_all_cache(self) -> bool:
        try:
            self.session.query(CachedSinr).delete()
            self._commit()
            logger.warning("🗑️ Whole SINR cache removed")
            return True
        except Exception as e:
            self.session.rollback()
            logger.error(f"❌ Could not clear cache: {e}")
            return False

    def close(self):
        self.session.close()
