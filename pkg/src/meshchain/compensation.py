"""Zero-sum cost compensation between mesh participants.

Each period every participant declares what it spent on the shared network
(``contribution_cost``) and how much traffic it used (``consumption_usage``).
The period's total cost is shared in proportion to usage; whoever paid more
than its share is owed the difference by those who paid less.

All amounts are integer minor currency units, so the zero-sum holds exactly.
The settlement runs as chaincode on the HLF pipeline, and its transfers can
be executed as value transfers on the PoA pipeline.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

from .hlf import (
    Chaincode, ChaincodeError, ChaincodeStub, DELTA_INDEX, VersionedStore,
    cc_send_money, create_composite_key, default_chaincode, split_composite_key,
)

RECORD_INDEX = "CompRecord"
SETTLEMENT_INDEX = "CompSettlement"


class CompensationError(ValueError):
    pass


class SettlementError(CompensationError):
    pass


@dataclass(frozen=True)
class CompensationRecord:
    participant: str
    period: int
    contribution_cost: int
    consumption_usage: int

    def __post_init__(self):
        if self.contribution_cost < 0 or self.consumption_usage < 0:
            raise CompensationError(f"{self.participant}: cost and usage must be non-negative")
        if not self.participant or any(c.isspace() for c in self.participant):
            raise CompensationError(f"bad participant id {self.participant!r}")


@dataclass
class SettlementResult:
    period: int
    net_balance: dict[str, int]
    transfers: list[tuple[str, str, int]]
    charges: dict[str, int] = field(default_factory=dict)

    def residuals(self) -> dict[str, int]:
        """Net balance left after applying every transfer (all zero when complete)."""
        left = dict(self.net_balance)
        for payer, payee, amount in self.transfers:
            left[payer] += amount
            left[payee] -= amount
        return left

    def to_json(self) -> dict:
        return {"period": self.period, "net": self.net_balance, "charges": self.charges,
                "transfers": [list(t) for t in self.transfers]}

    @classmethod
    def from_json(cls, d: dict) -> "SettlementResult":
        return cls(int(d["period"]), {k: int(v) for k, v in d["net"].items()},
                   [(a, b, int(x)) for a, b, x in d["transfers"]],
                   {k: int(v) for k, v in d["charges"].items()})


@dataclass(frozen=True)
class DeltaEntry:
    name: str
    op: str
    value: int
    tx_id: str

    @property
    def key(self) -> str:
        return create_composite_key(DELTA_INDEX, [self.name, self.op, str(self.value), self.tx_id])

    @property
    def signed(self) -> int:
        return self.value if self.op == "+" else -self.value


# --------------------------------------------------------------------------- pure accounting


def send_money(name: str, value: int, op: str, tx_id: str) -> DeltaEntry:
    """Build the append-only delta row for one balance change."""
    if not isinstance(value, int) or value <= 0:
        raise CompensationError("value must be a positive integer")
    if op not in ("+", "-"):
        raise CompensationError(f"op must be '+' or '-', got {op!r}")
    return DeltaEntry(name, op, value, tx_id)


def aggregate(entries: Iterable[DeltaEntry], name: str) -> int:
    return sum(e.signed for e in entries if e.name == name)


def largest_remainder(weights: Sequence[int], total: int) -> list[int]:
    """Integer shares of ``total`` proportional to ``weights`` that sum to ``total`` exactly.

    Leftover units go to the largest fractional remainders; ties go to the
    earlier index.
    """
    wsum = sum(weights)
    if total == 0:
        return [0] * len(weights)
    if wsum <= 0:
        raise SettlementError("cannot share a positive cost over zero total usage")
    base = [w * total // wsum for w in weights]
    rems = [w * total % wsum for w in weights]
    short = total - sum(base)
    for i in sorted(range(len(weights)), key=lambda i: (-rems[i], i))[:short]:
        base[i] += 1
    return base


def greedy_transfers(net: dict[str, int]) -> list[tuple[str, str, int]]:
    """Pair the largest debtor with the largest creditor until all debts are paid."""
    debt = {p: -v for p, v in net.items() if v < 0}
    credit = {p: v for p, v in net.items() if v > 0}
    out = []
    while debt:
        payer = min(debt, key=lambda p: (-debt[p], p))
        payee = min(credit, key=lambda p: (-credit[p], p))
        amount = min(debt[payer], credit[payee])
        out.append((payer, payee, amount))
        for book, who in ((debt, payer), (credit, payee)):
            book[who] -= amount
            if book[who] == 0:
                del book[who]
    return out


def check_period(records: Sequence[CompensationRecord]) -> int | None:
    """Validate one period's records; returns the period (None for an empty list)."""
    if not records:
        return None
    periods = {r.period for r in records}
    if len(periods) != 1:
        raise CompensationError(f"records span several periods: {sorted(periods)}")
    seen = set()
    for r in records:
        if r.participant in seen:
            raise CompensationError(f"duplicate participant {r.participant} in period {r.period}")
        seen.add(r.participant)
    return records[0].period


def compute_settlement(records: Sequence[CompensationRecord], period: int | None = None) -> SettlementResult:
    found = check_period(records)
    period = found if period is None else period
    if found is not None and found != period:
        raise CompensationError(f"records are for period {found}, not {period}")
    recs = sorted(records, key=lambda r: r.participant)
    total = sum(r.contribution_cost for r in recs)
    usage = [r.consumption_usage for r in recs]
    if total > 0 and sum(usage) == 0:
        raise SettlementError(f"period {period}: total cost {total} but no usage to charge it to")
    charges = largest_remainder(usage, total) if recs else []
    charge = {r.participant: c for r, c in zip(recs, charges)}
    net = {r.participant: r.contribution_cost - charge[r.participant] for r in recs}
    return SettlementResult(period if period is not None else 0, net, greedy_transfers(net), charge)


# --------------------------------------------------------------------------- text ingestion


def parse_records(source: str | TextIO) -> list[CompensationRecord]:
    """Lines of ``participant period contribution_cost consumption_usage``; ``#`` starts a comment."""
    text = source if isinstance(source, str) else source.read()
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise CompensationError(f"line {lineno}: expected 4 fields, got {len(parts)}")
        try:
            out.append(CompensationRecord(parts[0], int(parts[1]), int(parts[2]), int(parts[3])))
        except ValueError as exc:
            raise CompensationError(f"line {lineno}: {exc}") from None
    return out


def read_records(path) -> list[CompensationRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_records(fh)


def by_period(records: Iterable[CompensationRecord]) -> dict[int, list[CompensationRecord]]:
    out: dict[int, list[CompensationRecord]] = {}
    for r in records:
        out.setdefault(r.period, []).append(r)
    return dict(sorted(out.items()))


# --------------------------------------------------------------------------- chaincode


def cc_record_usage(stub: ChaincodeStub, participant: str, period, contribution, usage) -> None:
    rec = CompensationRecord(participant, int(period), int(contribution), int(usage))
    key = create_composite_key(RECORD_INDEX, [str(rec.period), rec.participant])
    if stub.get_state(key) is not None:
        raise ChaincodeError(f"{participant} already recorded for period {period}")
    stub.put_state(key, f"{rec.contribution_cost} {rec.consumption_usage}")


def stored_records(store_or_stub, period: int) -> list[CompensationRecord]:
    if isinstance(store_or_stub, ChaincodeStub):
        rows = store_or_stub.get_state_by_partial_composite_key(RECORD_INDEX, [str(period)])
    else:
        rows = [(k, store_or_stub.get(k)) for k in store_or_stub.keys(create_composite_key(RECORD_INDEX, [str(period)]))]
    out = []
    for key, value in rows:
        _, (p, participant) = split_composite_key(key)
        cost, usage = value.split()
        out.append(CompensationRecord(participant, int(p), int(cost), int(usage)))
    return out


def cc_settle(stub: ChaincodeStub, period) -> None:
    # the settlement is computed in-contract from the committed records, then
    # every net balance lands on the participant's account as a delta row
    key = create_composite_key(SETTLEMENT_INDEX, [str(int(period))])
    if stub.get_state(key) is not None:
        raise ChaincodeError(f"period {period} already settled")
    try:
        result = compute_settlement(stored_records(stub, int(period)), int(period))
    except CompensationError as exc:
        raise ChaincodeError(str(exc)) from None
    stub.put_state(key, json.dumps(result.to_json(), sort_keys=True, separators=(",", ":")))
    for name, v in sorted(result.net_balance.items()):
        if v:
            cc_send_money(stub, name, abs(v), "+" if v > 0 else "-")


def compensation_chaincode() -> Chaincode:
    cc = default_chaincode()
    cc.register("recordUsage", cc_record_usage)
    cc.register("settle", cc_settle)
    return cc


def read_settlement(store: VersionedStore, period: int) -> SettlementResult | None:
    raw = store.get(create_composite_key(SETTLEMENT_INDEX, [str(period)]))
    return None if raw is None else SettlementResult.from_json(json.loads(raw))


# --------------------------------------------------------------------------- pipeline drivers


def record_period(net, records: Sequence[CompensationRecord], client: str = "client") -> list[str]:
    """Submit one ``recordUsage`` append per participant to an HLF network."""
    check_period(records)
    return [net.submit_tx(("recordUsage", [r.participant, str(r.period), str(r.contribution_cost),
                                           str(r.consumption_usage)]), client=client)
            for r in records]


def settle(net, period: int, client: str = "client") -> str:
    return net.submit_tx(("settle", [str(period)]), client=client)


def pay_on_poa(net, result: SettlementResult, entry_node: str | None = None) -> list[str]:
    """Execute settlement transfers as PoA value transfers (payer to payee)."""
    entry = entry_node or net.plan.node_for("client")
    return [net.send_transaction(entry, payer, payee, amount) for payer, payee, amount in result.transfers]
