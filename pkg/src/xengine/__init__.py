"""Consistent snapshots and atomic commits across two toy MVCC engines."""

from .coordinator import ConfigError, Coordinator, Crash, CsrRejected, GlobalTransaction, TxnState
from .csr import CsrDecision, CsrRegistry, InactiveIndex
from .engine import (
    Counter, Engine, EngineConfig, Isolation, ReadView, SnapshotKind, TxnAborted, make_engine,
)
from .history import History, HistoryEvent
from .pipeline import CommitQueue, RecoveryReport, Ticket, recover
from .wal import CorruptLog, RecordKind, Wal

__all__ = [
    "CommitQueue", "ConfigError", "Coordinator", "CorruptLog", "Counter", "Crash", "CsrDecision",
    "CsrRegistry", "CsrRejected", "Engine", "EngineConfig", "GlobalTransaction", "History",
    "HistoryEvent", "InactiveIndex", "Isolation", "ReadView", "RecordKind", "RecoveryReport",
    "SnapshotKind", "Ticket", "TxnAborted", "TxnState", "Wal", "make_engine", "recover",
]
