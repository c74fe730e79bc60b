"""
Caching Layer Module

Memory and disk caches for expensive solver artifacts: Helmholtz wavefields
keyed by (model, frequency, solver) and the per-frequency solvers themselves.
"""

import hashlib
import logging
import threading
from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, Generic, Optional, TypeVar

import numpy as np

from .file_formats import decode_wavefields, encode_wavefields

try:
    import diskcache
    DISKCACHE_AVAILABLE = True
except ImportError:
    DISKCACHE_AVAILABLE = False
    logging.warning("diskcache not available, wavefields stay in memory")

logger = logging.getLogger(__name__)

T = TypeVar('T')

DEFAULT_DISK_LIMIT = 2 * 1024**3


class LRUCache(Generic[T]):
    """Bounded map that drops the least recently read entry first; safe across source threads"""

    def __init__(self, max_size: int = 16):
        if max_size < 1:
            raise ValueError(f"max_size must be at least 1, got {max_size}")
        self.max_size = max_size
        self._entries: "OrderedDict[str, T]" = OrderedDict()
        self._lock = threading.RLock()
        self.hits = 0
        self.misses = 0

    def get(self, key: str) -> Optional[T]:
        with self._lock:
            if key not in self._entries:
                self.misses += 1
                return None
            self.hits += 1
            self._entries.move_to_end(key)
            return self._entries[key]

    def set(self, key: str, value: T):
        with self._lock:
            self._entries[key] = value
            self._entries.move_to_end(key)
            while len(self._entries) > self.max_size:
                dropped, _ = self._entries.popitem(last=False)
                logger.debug(f"Evicted {dropped[:12]} from memory cache")

    def delete(self, key: str) -> bool:
        with self._lock:
            return self._entries.pop(key, None) is not None

    def clear(self):
        with self._lock:
            self._entries.clear()

    def size(self) -> int:
        return len(self._entries)

    def stats(self) -> Dict[str, Any]:
        with self._lock:
            return {
                'size': len(self._entries),
                'max_size': self.max_size,
                'hits': self.hits,
                'misses': self.misses,
            }


class WavefieldStore:
    """JSWF1 blobs in a diskcache directory, quantized to the store precision on write"""

    def __init__(self, cache_dir: Path, precision: str = "f16", size_limit: int = DEFAULT_DISK_LIMIT):
        if not DISKCACHE_AVAILABLE:
            raise ImportError("diskcache package required for disk caching")
        self.cache_dir = cache_dir
        self.precision = precision
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._cache = diskcache.Cache(str(self.cache_dir), size_limit=size_limit)

    def load(self, key: str) -> Optional[np.ndarray]:
        """Fields as (nodes, sources), or None on a miss or an unreadable entry"""
        try:
            blob = self._cache.get(key)
            return None if blob is None else decode_wavefields(blob).T
        except Exception as e:
            logger.warning(f"Dropping unreadable wavefield entry {key[:12]}: {e}")
            self._cache.delete(key)
            return None

    def store(self, key: str, fields: np.ndarray):
        try:
            self._cache.set(key, encode_wavefields(fields.T, self.precision))
        except Exception as e:
            logger.warning(f"Error caching wavefields to disk: {e}")

    def clear(self):
        self._cache.clear()

    def close(self):
        self._cache.close()

    def stats(self) -> Dict[str, Any]:
        return {
            'entries': len(self._cache),
            'bytes': self._cache.volume(),
            'precision': self.precision,
        }


def model_key(values: np.ndarray, *parts: Any) -> str:
    """Hash of the model bytes plus any extra key parts"""
    digest = hashlib.sha256(np.ascontiguousarray(values, dtype=np.float64).tobytes())
    for part in parts:
        digest.update(repr(part).encode())
    return digest.hexdigest()


class FieldCache:
    """
    Wavefield blocks (nodes x sources) in RAM at full precision, optionally
    spilled to disk as JSWF1 bytes in the configured precision
    """

    def __init__(self,
                 memory_cache_size: int = 8,
                 disk_cache_dir: Optional[Path] = None,
                 disk_precision: str = "f16"):
        self.memory_cache = LRUCache[np.ndarray](max_size=memory_cache_size)
        self.disk_precision = disk_precision

        self.disk_cache: Optional[WavefieldStore] = None
        if disk_cache_dir and DISKCACHE_AVAILABLE:
            try:
                self.disk_cache = WavefieldStore(disk_cache_dir, disk_precision)
                logger.info(f"Disk cache enabled for wavefields: {disk_cache_dir} ({disk_precision})")
            except OSError as e:
                logger.warning(f"Failed to open wavefield cache at {disk_cache_dir}: {e}")

    def get_fields(self, key: str) -> Optional[np.ndarray]:
        fields = self.memory_cache.get(key)
        if fields is None and self.disk_cache:
            fields = self.disk_cache.load(key)
            if fields is not None:
                self.memory_cache.set(key, fields)
        return fields

    def set_fields(self, key: str, fields: np.ndarray):
        self.memory_cache.set(key, fields)
        if self.disk_cache:
            self.disk_cache.store(key, fields)

    def clear(self):
        self.memory_cache.clear()
        if self.disk_cache:
            self.disk_cache.clear()

    def stats(self) -> Dict[str, Any]:
        stats = {'memory_cache': self.memory_cache.stats()}
        if self.disk_cache:
            stats['disk_cache'] = self.disk_cache.stats()
        return stats
