"""Account-based chain with round-robin proof-of-authority sealing.

One authorised sealer account runs as several replica instances that take
strict turns, so the chain never forks. A transaction counts as complete once
twelve further blocks sit on top of the block that included it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

from .engine import Engine, ms_to_us
from .ledger import ZERO_DIGEST, digest
from .placement import PlacementPlan
from .records import DROPPED, PENDING, REJECTED, VALID, TxRecord


class PoaError(ValueError):
    pass


class UnknownAccountError(KeyError):
    pass


@dataclass
class Account:
    address: str
    balance: int
    nonce: int = 0


@dataclass(frozen=True)
class EthTx:
    tx_id: str
    sender: str
    to: str
    value: int
    nonce: int
    gas: int
    submit_time: float

    def to_json(self) -> list:
        return [self.tx_id, self.sender, self.to, self.value, self.nonce, self.gas]


@dataclass(frozen=True)
class PoaBlock:
    number: int
    prev_hash: str
    sealer: str
    txs: tuple[EthTx, ...]
    seal_time: float  # ms

    def to_json(self) -> dict:
        return {"number": self.number, "prev_hash": self.prev_hash, "sealer": self.sealer,
                "seal_us": ms_to_us(self.seal_time), "txs": [t.to_json() for t in self.txs]}

    def hash(self) -> str:
        return digest(self.to_json())


@dataclass(frozen=True)
class PoaConfig:
    """Work units are ms of CPU on a reference (cpu 1.0) node."""

    blocktime_ms: float = 5000.0
    block_tx_limit: int = 300
    sealers: int = 1
    confirmations: int = 12
    drop_horizon_blocks: int = 50
    accept_work: float = 30.0
    forward_work: float = 2.0
    pool_work: float = 0.5
    seal_work_base: float = 5.0
    seal_work_per_tx: float = 0.2
    import_work_base: float = 5.0
    import_work_per_tx: float = 1.0
    tx_bytes: int = 120
    block_header_bytes: int = 600
    gas: int = 21000

    def validate(self) -> None:
        if self.blocktime_ms <= 0 or self.block_tx_limit < 1 or self.sealers < 1:
            raise PoaError("blocktime, block_tx_limit and sealers must be positive")
        if self.confirmations < 0 or self.drop_horizon_blocks < 1:
            raise PoaError("bad confirmation depth or drop horizon")

    def roles(self) -> list[str]:
        return ["client"] + [f"sealer#{i + 1}" for i in range(self.sealers)]


def replay_balances(genesis: dict[str, int], blocks: Iterable[PoaBlock]) -> dict[str, int]:
    """Balances after applying every transfer in ``blocks`` to ``genesis``."""
    bal = dict(genesis)
    for block in blocks:
        for tx in block.txs:
            bal[tx.sender] -= tx.value
            bal[tx.to] += tx.value
    return bal


class PoaNetwork:
    def __init__(self, engine: Engine, plan: PlacementPlan, config: PoaConfig = PoaConfig(),
                 genesis: dict[str, int] | None = None):
        config.validate()
        self.engine = engine
        self.plan = plan
        self.config = config
        self.sealers = plan.roles("sealer")
        if not self.sealers:
            raise PoaError("plan has no sealer")
        self.genesis = dict(genesis or {"alice": 10**9, "bob": 0})
        self.accounts = {a: Account(a, b) for a, b in self.genesis.items()}
        self.chain: list[PoaBlock] = [PoaBlock(0, ZERO_DIGEST, "genesis", (), 0.0)]
        self.snapshots: list[dict[str, int]] = [dict(self.genesis)]
        self.pools: dict[str, list[EthTx]] = {s: [] for s in self.sealers}
        self.records: dict[str, TxRecord] = {}
        self.txs: dict[str, EthTx] = {}
        self.included: dict[str, int] = {}
        self._pending_nonce: dict[tuple[str, str], int] = {}
        self._imported: dict[str, int] = {}
        self._held: dict[str, dict[int, PoaBlock]] = {}
        self._seal_scheduled = False
        self._listeners: list[Callable[[TxRecord], None]] = []
        self._counter = 0

    # ------------------------------------------------------------- bookkeeping

    @property
    def head(self) -> PoaBlock:
        return self.chain[-1]

    def on_final(self, fn: Callable[[TxRecord], None]) -> None:
        self._listeners.append(fn)

    def _finalize(self, rec: TxRecord) -> None:
        for fn in list(self._listeners):
            fn(rec)

    def outstanding(self) -> int:
        return sum(1 for r in self.records.values() if r.status == PENDING)

    def next_tx_id(self) -> str:
        self._counter += 1
        return f"eth{self._counter:06d}"

    def sites(self) -> list[str]:
        return self.plan.sites()

    def in_turn(self, number: int) -> str:
        return self.sealers[(number - 1) % len(self.sealers)]

    # ------------------------------------------------------------- submission

    def send_transaction(self, entry_node: str, sender: str, to: str, value: int = 1,
                         tx_id: str | None = None) -> str:
        """Hand a value transfer to ``entry_node``, which accepts it and relays it to every sealer."""
        for addr in (sender, to):
            if addr not in self.accounts:
                raise UnknownAccountError(addr)
        if entry_node not in self.sites():
            raise PoaError(f"{entry_node} runs no blockchain node")
        if value <= 0:
            raise PoaError("value must be positive")
        tx_id = tx_id or self.next_tx_id()
        if tx_id in self.records:
            raise PoaError(f"duplicate tx id {tx_id}")
        now = self.engine.now
        rec = self.records[tx_id] = TxRecord(tx_id, entry_node, now)
        self.engine.log(entry_node, "submit", tx_id)
        if self.accounts[sender].balance < value:
            rec.status, rec.reason = REJECTED, "insufficient balance"
            self._finalize(rec)
            return tx_id
        self._ensure_sealing()
        work = self.config.accept_work + self.config.forward_work * len(self.sealers)

        def accepted():
            if rec.status != PENDING:
                return
            key = (entry_node, sender)
            nonce = max(self._pending_nonce.get(key, 0), self.accounts[sender].nonce)
            self._pending_nonce[key] = nonce + 1
            tx = EthTx(tx_id, sender, to, int(value), nonce, self.config.gas, now)
            self.txs[tx_id] = tx
            for role in self.sealers:
                self.engine.send_message(entry_node, self.plan.node_for(role), self.config.tx_bytes,
                                         (role, tx), self._on_tx, label=f"tx {tx_id}")

        self.engine.cpu(entry_node).submit(work, accepted, label=f"accept {tx_id}")
        return tx_id

    def _on_tx(self, msg) -> None:
        role, tx = msg

        def pooled():
            if self.records[tx.tx_id].status == PENDING and tx.tx_id not in self.included:
                self.pools[role].append(tx)

        self.engine.cpu(self.plan.node_for(role)).submit(self.config.pool_work, pooled, label=f"pool {tx.tx_id}")

    # ------------------------------------------------------------- sealing

    def _ensure_sealing(self) -> None:
        if self._seal_scheduled:
            return
        bt = ms_to_us(self.config.blocktime_ms)
        number = max(self.head.number + 1, self.engine.now_us // bt + 1)
        self._seal_scheduled = True
        self.engine.at(number * bt, "timer", lambda _ev: self._seal_tick(), node=self.plan.node_for(self.in_turn(number)),
                       detail=f"seal-boundary {number}")

    def _seal_tick(self) -> None:
        self._seal_scheduled = False
        if self.outstanding() == 0:
            return
        self.seal_next_block(self.engine.now)
        if self.outstanding() > 0:
            self._ensure_sealing()

    def _select(self, pool: list[EthTx]) -> tuple[list[EthTx], list[EthTx]]:
        """Pick executable txs in arrival order, honouring per-sender nonce order."""
        limit = self.config.block_tx_limit
        nonces = {a: acc.nonce for a, acc in self.accounts.items()}
        balances = {a: acc.balance for a, acc in self.accounts.items()}
        chosen: list[EthTx] = []
        unfunded: list[EthTx] = []
        taken: set[str] = set()
        progress = True
        while progress and len(chosen) < limit:
            progress = False
            for tx in pool:
                if len(chosen) >= limit:
                    break
                if tx.tx_id in taken or tx.nonce != nonces[tx.sender]:
                    continue
                taken.add(tx.tx_id)
                if balances[tx.sender] < tx.value:
                    unfunded.append(tx)
                    continue
                balances[tx.sender] -= tx.value
                balances[tx.to] += tx.value
                nonces[tx.sender] += 1
                chosen.append(tx)
                progress = True
        return chosen, unfunded

    def seal_next_block(self, now: float) -> PoaBlock:
        """Seal the block for boundary ``now`` with the in-turn sealer instance."""
        bt = self.config.blocktime_ms
        number = self.head.number + 1
        if ms_to_us(now) != ms_to_us(number * bt):
            raise PoaError(f"block {number} must be sealed at {number * bt} ms, not {now}")
        role = self.in_turn(number)
        node = self.plan.node_for(role)
        pool = [tx for tx in self.pools[role]
                if tx.tx_id not in self.included and self.records[tx.tx_id].status == PENDING]
        chosen, unfunded = self._select(pool)
        for tx in unfunded:
            self._drop(self.records[tx.tx_id], "insufficient balance at inclusion")
        block = PoaBlock(number, self.head.hash(), role, tuple(chosen), now)
        self.chain.append(block)
        for tx in chosen:
            acc_from, acc_to = self.accounts[tx.sender], self.accounts[tx.to]
            acc_from.balance -= tx.value
            acc_to.balance += tx.value
            acc_from.nonce += 1
            self.included[tx.tx_id] = number
            rec = self.records[tx.tx_id]
            rec.seal, rec.block = now, number
        self.snapshots.append({a: acc.balance for a, acc in self.accounts.items()})
        gone = set(self.included)
        for r in self.pools:
            self.pools[r] = [tx for tx in self.pools[r] if tx.tx_id not in gone]

        depth_block = number - self.config.confirmations
        if depth_block >= 1:
            for tx in self.chain[depth_block].txs:
                self.records[tx.tx_id].complete = now
        self._drop_stale(number)

        self.engine.log(node, "seal", f"{role} number={number} txs={len(chosen)}")
        work = self.config.seal_work_base + self.config.seal_work_per_tx * len(chosen)
        nbytes = self.config.block_header_bytes + self.config.tx_bytes * len(chosen)

        def sealed():
            self._arrive(node, block, local=True)
            for site in self.sites():
                if site != node:
                    self.engine.send_message(node, site, nbytes, (site, block), self._on_block,
                                             label=f"block {number}")

        self.engine.cpu(node).submit(work, sealed, label=f"seal {number}")
        return block

    def _drop(self, rec: TxRecord, reason: str) -> None:
        rec.status, rec.reason = DROPPED, reason
        self.engine.log(rec.client, "drop", f"{rec.tx_id} {reason}")
        self._finalize(rec)

    def _drop_stale(self, number: int) -> None:
        bt = ms_to_us(self.config.blocktime_ms)
        for rec in self.records.values():
            if rec.status != PENDING or rec.block is not None:
                continue
            first = ms_to_us(rec.submit) // bt + 1
            if number - first + 1 >= self.config.drop_horizon_blocks:
                self._drop(rec, f"not included within {self.config.drop_horizon_blocks} blocks")

    # ------------------------------------------------------------- propagation

    def _on_block(self, msg) -> None:
        site, block = msg
        self._arrive(site, block, local=False)

    def _arrive(self, site: str, block: PoaBlock, local: bool) -> None:
        """Import blocks at ``site`` strictly in chain order."""
        held = self._held.setdefault(site, {})
        held[block.number] = block
        while self._imported.get(site, 0) + 1 in held:
            b = held.pop(self._imported.get(site, 0) + 1)
            self._imported[site] = b.number
            if local and b is block:
                self._observe(site, b)
                continue
            work = self.config.import_work_base + self.config.import_work_per_tx * len(b.txs)
            self.engine.cpu(site).submit(work, lambda b=b: self._observe(site, b), label=f"import {b.number}")

    def _observe(self, site: str, block: PoaBlock) -> None:
        """``site`` now has ``block``; notify transactions that entered through it."""
        now = self.engine.now
        for tx in block.txs:
            rec = self.records[tx.tx_id]
            if rec.client == site and rec.seal_observed is None:
                rec.seal_observed = now
        depth_block = block.number - self.config.confirmations
        if depth_block >= 1:
            for tx in self.chain[depth_block].txs:
                rec = self.records[tx.tx_id]
                if rec.client == site and rec.complete_observed is None:
                    rec.complete_observed = now
                    rec.status = VALID
                    self._finalize(rec)

    # ------------------------------------------------------------- queries

    def confirmation_depth(self, tx_id: str) -> int | None:
        number = self.included.get(tx_id)
        return None if number is None else self.head.number - number

    def get_balance(self, address: str, height: int | None = None) -> int:
        """Balance at ``height`` by replaying the chain from genesis."""
        if address not in self.genesis:
            raise UnknownAccountError(address)
        height = self.head.number if height is None else height
        if not 0 <= height <= self.head.number:
            raise PoaError(f"height {height} beyond head {self.head.number}")
        return replay_balances(self.genesis, self.chain[1:height + 1])[address]
