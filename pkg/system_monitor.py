"""
Resource monitor - MOMA link-level simulator
Host health, worker-count recommendation for concurrent trials and a memory
check for the NM x NM workloads of a sweep.
"""
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional

import psutil

logger = logging.getLogger(__name__)

COMPLEX_BYTES = 16


class SystemMonitor:
    """Host resources seen by the simulator"""

    def __init__(self, db_path: str = 'moma_results.db', log_path: str = 'moma.log'):
        self.db_path = db_path
        self.log_path = log_path

    # ==========================================
    # WORKERS AND MEMORY
    # ==========================================
    def recommended_workers(self, requested: Optional[int] = None) -> int:
        """Physical cores, capped by the request"""
        cores = psutil.cpu_count(logical=False) or psutil.cpu_count() or 1
        if requested is not None and requested > 0:
            return max(1, min(int(requested), cores * 2))
        return max(1, cores)

    @staticmethod
    def workload_bytes(n: int, antennas: int, n_users: int) -> int:
        """Dominant footprint: the per-user R_k and Phi_k plus the C X C^H stacks"""
        dim = n * antennas
        return 4 * n_users * dim * dim * COMPLEX_BYTES

    def check_workload(self, n: int, antennas: int, n_users: int) -> bool:
        needed = self.workload_bytes(n, antennas, n_users)
        available = psutil.virtual_memory().available
        if needed > available:
            logger.warning(f"⚠️ NM={n * antennas} with K={n_users} needs ~{needed / 1024 ** 3:.2f} GB, "
                           f"only {available / 1024 ** 3:.2f} GB available")
            return False
        return True

    # ==========================================
    # HEALTH
    # ==========================================
    def get_system_health(self) -> Dict[str, Any]:
        try:
            db_size = os.path.getsize(self.db_path) / 1024 / 1024 if os.path.exists(self.db_path) else 0.0
            log_size = os.path.getsize(self.log_path) / 1024 / 1024 if os.path.exists(self.log_path) else 0.0

            memory = psutil.virtual_memory()
            disk = psutil.disk_usage(str(Path('.').resolve()))
            return {
                'database_size_mb': round(db_size, 2),
                'log_size_mb': round(log_size, 2),
                'cpu_count': psutil.cpu_count(),
                'cpu_percent': psutil.cpu_percent(interval=0.1),
                'memory_percent': memory.percent,
                'memory_available_gb': round(memory.available / 1024 ** 3, 2),
                'disk_percent': disk.percent,
                'disk_free_gb': round(disk.free / 1024 ** 3, 2),
            }
        except Exception as e:
            logger.error(f"❌ Could not read system health: {e}")
            return {}

    def get_recommendations(self) -> List[Dict[str, Any]]:
        recommendations = []
        health = self.get_system_health()

        if health.get('memory_percent', 0) > 85:
            recommendations.append({
                'severity': 'critical',
                'message': 'Memory above 85%. Lower the worker count or the largest M of the sweep.',
            })
        if health.get('cpu_percent', 0) > 80:
            recommendations.append({
                'severity': 'warning',
                'message': 'CPU above 80%. Concurrent trials will be slower than expected.',
            })
        if health.get('database_size_mb', 0) > 500:
            recommendations.append({
                'severity': 'warning',
                'message': 'Results database > 500MB. Clean the expired SINR cache.',
            })
        if health.get('log_size_mb', 0) > 100:
            recommendations.append({
                'severity': 'info',
                'message': 'Log file > 100MB.',
            })

        if not recommendations:
            recommendations.append({'severity': 'success', 'message': '✅ Resources OK'})
        return recommendations

    def log_health(self):
        health = self.get_system_health()
        if health:
            logger.info(f"📊 CPU {health['cpu_percent']}% | RAM {health['memory_percent']}% "
                        f"({health['memory_available_gb']} GB free) | cores {health['cpu_count']}")
        for item in self.get_recommendations():
            if item['severity'] in ('critical', 'warning'):
                logger.warning(f"⚠️ {item['message']}")
