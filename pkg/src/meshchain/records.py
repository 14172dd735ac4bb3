"""Per-transaction timelines shared by both pipelines."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

PENDING = "pending"
VALID = "valid"
INVALID = "invalid"
REJECTED = "rejected"
DROPPED = "dropped"


@dataclass
class TxRecord:
    """Timeline of one transaction; all times in ms of virtual time."""

    tx_id: str
    client: str
    submit: float
    endorse: Optional[float] = None
    order: Optional[float] = None
    commit: Optional[float] = None
    seal: Optional[float] = None
    seal_observed: Optional[float] = None
    complete: Optional[float] = None
    complete_observed: Optional[float] = None
    block: Optional[int] = None
    status: str = PENDING
    reason: str = ""
    peer_commits: dict[str, float] = field(default_factory=dict)

    def latency(self, metric: str) -> Optional[float]:
        t = {
            "ttc": self.commit,
            "tte": self.endorse,
            "seal": self.seal,
            "seal_observed": self.seal_observed,
            "complete": self.complete,
            "complete_observed": self.complete_observed,
        }[metric]
        return None if t is None else t - self.submit
