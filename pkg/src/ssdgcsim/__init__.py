"""Discrete-event simulator of an SSD array with unsynchronized garbage
collection, a set-associative write-back page cache and a dirty page flusher."""

from ssdgcsim.engine import Engine, Event, EventKind, SimulationError
from ssdgcsim.ssd import SsdConfig, SsdDevice, steady_state_iops
from ssdgcsim.mapping import ArrayLayout
from ssdgcsim.queues import DualQueue, FlushRequest, IoRequest
from ssdgcsim.cache import CachePage, PageCache, PageSet
from ssdgcsim.flusher import Flusher, compute_flush_scores
from ssdgcsim.workload import WorkloadSpec
from ssdgcsim.metrics import RunMetrics, extra_writeback
from ssdgcsim.simulation import ArraySimulation, SimConfig

__version__ = "0.1.0"

__all__ = [
    "ArrayLayout",
    "ArraySimulation",
    "CachePage",
    "DualQueue",
    "Engine",
    "Event",
    "EventKind",
    "FlushRequest",
    "Flusher",
    "IoRequest",
    "PageCache",
    "PageSet",
    "RunMetrics",
    "SimConfig",
    "SimulationError",
    "SsdConfig",
    "SsdDevice",
    "WorkloadSpec",
    "compute_flush_scores",
    "extra_writeback",
    "steady_state_iops",
]
