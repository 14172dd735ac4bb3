"""Execute-order-validate pipeline: client, endorsers, a single orderer and
committing peers running over the event engine."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

from .engine import Engine, ms_to_us
from .ledger import ZERO_DIGEST, digest
from .placement import PlacementPlan
from .records import INVALID, PENDING, REJECTED, VALID, TxRecord

COMPOSITE_SEP = "\x00"
DELTA_INDEX = "NameOpValueTxID"
BALANCE_INDEX = "Balance"


class ChaincodeError(Exception):
    pass


class PipelineError(ValueError):
    pass


# --------------------------------------------------------------------------- state


class VersionedStore:
    """Key -> (value, version). Each committed write bumps the key's version by one."""

    def __init__(self, items: dict[str, tuple[str, int]] | None = None):
        self._data: dict[str, tuple[str, int]] = dict(items or {})

    def get(self, key: str) -> str | None:
        item = self._data.get(key)
        return None if item is None else item[0]

    def version(self, key: str) -> int:
        item = self._data.get(key)
        return 0 if item is None else item[1]

    def apply(self, writes: Iterable[tuple[str, str]]) -> None:
        for key, value in writes:
            self._data[key] = (value, self.version(key) + 1)

    def keys(self, prefix: str = "") -> list[str]:
        return sorted(k for k in self._data if k.startswith(prefix))

    def items(self) -> list[tuple[str, str, int]]:
        return [(k, v, ver) for k, (v, ver) in sorted(self._data.items())]

    def copy(self) -> "VersionedStore":
        return VersionedStore(self._data)

    def digest(self) -> str:
        return digest(self.items())

    def __len__(self) -> int:
        return len(self._data)


@dataclass(frozen=True)
class RWSet:
    reads: tuple[tuple[str, int], ...]
    writes: tuple[tuple[str, str], ...]

    def to_json(self) -> dict:
        return {"reads": [list(r) for r in self.reads], "writes": [list(w) for w in self.writes]}


class ChaincodeStub:
    """Simulation context handed to chaincode: records reads, buffers writes."""

    def __init__(self, store: VersionedStore, tx_id: str):
        self._store = store
        self._tx_id = tx_id
        self._reads: dict[str, int] = {}
        self._writes: dict[str, str] = {}

    def get_tx_id(self) -> str:
        return self._tx_id

    def get_state(self, key: str) -> str | None:
        if key in self._writes:
            return self._writes[key]
        self._reads.setdefault(key, self._store.version(key))
        return self._store.get(key)

    def put_state(self, key: str, value: str) -> None:
        self._writes[key] = value

    def get_state_by_partial_composite_key(self, object_type: str, attrs: Sequence[str]) -> list[tuple[str, str]]:
        prefix = create_composite_key(object_type, attrs)
        out = []
        for key in self._store.keys(prefix):
            out.append((key, self.get_state(key)))
        return out

    def create_composite_key(self, object_type: str, attrs: Sequence[str]) -> str:
        return create_composite_key(object_type, attrs)

    def rwset(self) -> RWSet:
        return RWSet(tuple(sorted(self._reads.items())), tuple(self._writes.items()))


def create_composite_key(object_type: str, attrs: Sequence[str]) -> str:
    for part in (object_type, *attrs):
        if COMPOSITE_SEP in str(part):
            raise ChaincodeError("composite key parts may not contain the separator")
    return COMPOSITE_SEP + COMPOSITE_SEP.join([object_type, *map(str, attrs)]) + COMPOSITE_SEP


def split_composite_key(key: str) -> tuple[str, list[str]]:
    parts = key.strip(COMPOSITE_SEP).split(COMPOSITE_SEP)
    return parts[0], parts[1:]


# --------------------------------------------------------------------------- chaincode

ChaincodeFn = Callable[..., Any]


class Chaincode:
    def __init__(self, functions: dict[str, ChaincodeFn] | None = None):
        self.functions: dict[str, ChaincodeFn] = dict(functions or {})

    def register(self, name: str, fn: ChaincodeFn) -> None:
        self.functions[name] = fn

    def invoke(self, store: VersionedStore, tx_id: str, call: tuple[str, Sequence[str]]) -> RWSet:
        name, args = call
        fn = self.functions.get(name)
        if fn is None:
            raise ChaincodeError(f"unknown chaincode function {name!r}")
        stub = ChaincodeStub(store, tx_id)
        fn(stub, *args)
        return stub.rwset()


def _positive_int(value) -> int:
    try:
        v = int(value)
    except (TypeError, ValueError):
        raise ChaincodeError(f"not an integer amount: {value!r}") from None
    if v <= 0:
        raise ChaincodeError("amount must be positive")
    return v


def cc_send_money(stub: ChaincodeStub, name: str, value, op: str) -> None:
    # append-only delta row; never reads, so parallel updates cannot conflict
    v = _positive_int(value)
    if op not in ("+", "-"):
        raise ChaincodeError(f"bad op {op!r}")
    key = stub.create_composite_key(DELTA_INDEX, [name, op, str(v), stub.get_tx_id()])
    stub.put_state(key, "\x00")


def cc_create_account(stub: ChaincodeStub, name: str, balance) -> None:
    stub.put_state(create_composite_key(BALANCE_INDEX, [name]), str(int(balance)))


def cc_rmw_update(stub: ChaincodeStub, name: str, value, op: str = "+") -> None:
    # read-modify-write on a single balance key; conflicts under MVCC
    v = _positive_int(value)
    key = create_composite_key(BALANCE_INDEX, [name])
    current = int(stub.get_state(key) or 0)
    stub.put_state(key, str(current + v if op == "+" else current - v))


def cc_transfer(stub: ChaincodeStub, src: str, dst: str, amount) -> None:
    a = _positive_int(amount)
    ks, kd = create_composite_key(BALANCE_INDEX, [src]), create_composite_key(BALANCE_INDEX, [dst])
    bs = int(stub.get_state(ks) or 0)
    if bs < a:
        raise ChaincodeError("insufficient funds")
    bd = int(stub.get_state(kd) or 0)
    stub.put_state(ks, str(bs - a))
    stub.put_state(kd, str(bd + a))


def default_chaincode() -> Chaincode:
    return Chaincode({
        "sendMoney": cc_send_money,
        "createAccount": cc_create_account,
        "update": cc_rmw_update,
        "transfer": cc_transfer,
    })


def aggregate(store: VersionedStore, name: str) -> int:
    """Net of all delta rows for ``name``: sum of '+' values minus sum of '-' values."""
    total = 0
    for key in store.keys(create_composite_key(DELTA_INDEX, [name])):
        _, (_, op, value, _) = split_composite_key(key)
        total += int(value) if op == "+" else -int(value)
    return total


def balance(store: VersionedStore, name: str) -> int:
    return int(store.get(create_composite_key(BALANCE_INDEX, [name])) or 0)


# --------------------------------------------------------------------------- protocol types


@dataclass(frozen=True)
class TxProposal:
    tx_id: str
    client: str
    call: tuple[str, tuple[str, ...]]
    submit_time: float


@dataclass(frozen=True)
class Endorsement:
    tx_id: str
    endorser: str
    rwset: RWSet | None
    signature: str = ""
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.rwset is not None and not self.error


@dataclass(frozen=True)
class EndorsementPolicy:
    required: int
    eligible: frozenset[str]

    def __post_init__(self):
        if not 1 <= self.required <= len(self.eligible):
            raise PipelineError(f"policy needs 1 <= m <= {len(self.eligible)}, got m={self.required}")

    def satisfied_by(self, endorsements: Sequence[Endorsement], rwset: RWSet) -> bool:
        signers = {e.endorser for e in endorsements
                   if e.ok and e.endorser in self.eligible and e.rwset == rwset
                   and e.signature == signature(e.endorser, e.tx_id)}
        return len(signers) >= self.required


def signature(endorser: str, tx_id: str) -> str:
    return f"sig:{endorser}:{tx_id}"


@dataclass(frozen=True)
class Envelope:
    proposal: TxProposal
    rwset: RWSet
    endorsements: tuple[Endorsement, ...]

    @property
    def tx_id(self) -> str:
        return self.proposal.tx_id

    def to_json(self) -> dict:
        p = self.proposal
        return {
            "tx_id": p.tx_id, "client": p.client, "fn": p.call[0], "args": list(p.call[1]),
            "rwset": self.rwset.to_json(),
            "endorsements": [[e.endorser, e.signature] for e in self.endorsements],
        }


@dataclass(frozen=True)
class HlfBlock:
    seq: int
    prev_hash: str
    txs: tuple[Envelope, ...]
    created_time: float  # ms

    def to_json(self) -> dict:
        return {"seq": self.seq, "prev_hash": self.prev_hash, "created_us": ms_to_us(self.created_time),
                "txs": [e.to_json() for e in self.txs]}

    def hash(self) -> str:
        return digest(self.to_json())


def collect_and_check(responses: Sequence[Endorsement], policy: EndorsementPolicy) -> tuple[bool, RWSet | None, tuple[Endorsement, ...]]:
    """Accept iff at least ``policy.required`` distinct eligible endorsers returned
    the same read/write set. Returns ``(accepted, rwset, matching endorsements)``."""
    groups: dict[RWSet, dict[str, Endorsement]] = {}
    for r in responses:
        if r.ok and r.endorser in policy.eligible:
            groups.setdefault(r.rwset, {}).setdefault(r.endorser, r)
    for rwset, by_endorser in groups.items():
        if len(by_endorser) >= policy.required:
            chosen = tuple(by_endorser[e] for e in sorted(by_endorser))
            return True, rwset, chosen
    return False, None, ()


# --------------------------------------------------------------------------- configuration


@dataclass(frozen=True)
class HlfConfig:
    """Pipeline parameters. Work units are ms of CPU on a reference (cpu 1.0) node."""

    block_size: int = 10
    batch_timeout_ms: float = 1000.0
    endorsers: int = 1
    committers: int = 1
    policy_m: int = 1
    client_submit_work: float = 380.0
    client_collect_work: float = 1.0
    endorse_work: float = 330.0
    reject_work: float = 5.0
    block_work_base: float = 20.0
    block_work_per_tx: float = 200.0
    commit_block_work: float = 30.0
    commit_work_per_tx: float = 230.0
    proposal_bytes: int = 1500
    response_bytes: int = 2500
    envelope_base_bytes: int = 2000
    envelope_per_endorsement_bytes: int = 1000
    block_header_bytes: int = 1000

    def validate(self) -> None:
        if self.block_size < 1:
            raise PipelineError("block_size must be >= 1")
        if self.batch_timeout_ms <= 0:
            raise PipelineError("batch_timeout_ms must be positive")
        if self.endorsers < 1 or self.committers < 0:
            raise PipelineError("need at least one endorser")
        if not 1 <= self.policy_m <= self.endorsers:
            raise PipelineError("policy_m must be within 1..endorsers")

    def roles(self) -> list[str]:
        return (["client"] + [f"endorser#{i + 1}" for i in range(self.endorsers)] + ["orderer"]
                + [f"committer#{i + 1}" for i in range(self.committers)])


# --------------------------------------------------------------------------- network


@dataclass
class Peer:
    role: str
    node: str
    store: VersionedStore
    chain: list[HlfBlock] = field(default_factory=list)
    validity: list[tuple[bool, ...]] = field(default_factory=list)
    digests: list[str] = field(default_factory=list)
    seen: set[str] = field(default_factory=set)
    ledger_ids: set[str] = field(default_factory=set)
    held: dict[int, HlfBlock] = field(default_factory=dict)
    next_queued: int = 0

    @property
    def height(self) -> int:
        return len(self.chain)


class HlfNetwork:
    """All HLF role state machines of one simulation."""

    def __init__(self, engine: Engine, plan: PlacementPlan, config: HlfConfig = HlfConfig(),
                 chaincode: Chaincode | None = None, genesis: Iterable[tuple[str, str]] = ()):
        config.validate()
        self.engine = engine
        self.plan = plan
        self.config = config
        self.chaincode = chaincode or default_chaincode()
        self.genesis = tuple(genesis)
        endorsers = plan.roles("endorser")
        if not endorsers:
            raise PipelineError("plan has no endorsers")
        if "orderer" not in plan.role_assignment:
            raise PipelineError("plan has no orderer")
        self.policy = EndorsementPolicy(min(config.policy_m, len(endorsers)), frozenset(endorsers))
        base = VersionedStore()
        base.apply(self.genesis)
        self.genesis_store = base
        self.peers: dict[str, Peer] = {
            role: Peer(role, plan.node_for(role), base.copy())
            for role in endorsers + plan.roles("committer")
        }
        self.orderer_node = plan.node_for("orderer")
        self.records: dict[str, TxRecord] = {}
        self.rejections: list[tuple[str, str, str]] = []
        self.blocks: list[HlfBlock] = []
        self._buffer: list[tuple[Envelope, int]] = []
        self._batch_gen = 0
        self._responses: dict[str, list[Endorsement]] = defaultdict(list)
        self._accepted: set[str] = set()
        self._listeners: list[Callable[[TxRecord], None]] = []
        self._counter = 0

    # ------------------------------------------------------------- helpers

    def on_final(self, fn: Callable[[TxRecord], None]) -> None:
        self._listeners.append(fn)

    def _finalize(self, rec: TxRecord) -> None:
        for fn in list(self._listeners):
            fn(rec)

    def outstanding(self) -> int:
        return sum(1 for r in self.records.values() if r.status == PENDING)

    def next_tx_id(self) -> str:
        self._counter += 1
        return f"tx{self._counter:06d}"

    def _envelope_bytes(self, env: Envelope) -> int:
        c = self.config
        return c.envelope_base_bytes + c.envelope_per_endorsement_bytes * len(env.endorsements)

    # ------------------------------------------------------------- step 1: proposal

    def submit_tx(self, call: tuple[str, Sequence[str]], client: str = "client", tx_id: str | None = None) -> str:
        if client not in self.plan.role_assignment:
            raise PipelineError(f"no client role {client!r} in plan")
        if not self.policy.eligible:
            raise PipelineError("no endorsers in plan")
        tx_id = tx_id or self.next_tx_id()
        now = self.engine.now
        proposal = TxProposal(tx_id, client, (call[0], tuple(str(a) for a in call[1])), now)
        if tx_id not in self.records:
            self.records[tx_id] = TxRecord(tx_id, client, now)
        node = self.plan.node_for(client)
        self.engine.log(node, "submit", tx_id)

        def fan_out():
            for role in sorted(self.policy.eligible):
                self.engine.send_message(node, self.plan.node_for(role), self.config.proposal_bytes,
                                         (role, proposal), self._on_proposal, label=f"proposal {tx_id}")

        self.engine.cpu(node).submit(self.config.client_submit_work, fan_out, label=f"submit {tx_id}")
        return tx_id

    # ------------------------------------------------------------- step 2: endorsement

    def endorse(self, role: str, proposal: TxProposal) -> Endorsement:
        """Simulate the chaincode on the endorser's current state (no mutation)."""
        peer = self.peers[role]
        try:
            rwset = self.chaincode.invoke(peer.store, proposal.tx_id, proposal.call)
        except ChaincodeError as exc:
            return Endorsement(proposal.tx_id, role, None, error=str(exc))
        return Endorsement(proposal.tx_id, role, rwset, signature(role, proposal.tx_id))

    def _on_proposal(self, msg) -> None:
        role, proposal = msg
        peer = self.peers[role]
        cpu = self.engine.cpu(peer.node)
        if proposal.tx_id in peer.seen or proposal.tx_id in peer.ledger_ids:
            resp = Endorsement(proposal.tx_id, role, None, error="duplicate tx_id")
            self.rejections.append((proposal.tx_id, role, resp.error))
            cpu.submit(self.config.reject_work, lambda: self._respond(peer, proposal, resp),
                       label=f"reject {proposal.tx_id}")
            return
        peer.seen.add(proposal.tx_id)

        def run():
            resp = self.endorse(role, proposal)
            if not resp.ok:
                self.rejections.append((proposal.tx_id, role, resp.error))
            self._respond(peer, proposal, resp)

        cpu.submit(self.config.endorse_work, run, label=f"endorse {proposal.tx_id}")

    def _respond(self, peer: Peer, proposal: TxProposal, resp: Endorsement) -> None:
        self.engine.send_message(peer.node, self.plan.node_for(proposal.client), self.config.response_bytes,
                                 (proposal, resp), self._on_response, label=f"response {proposal.tx_id}")

    # ------------------------------------------------------------- step 3-4: collect, forward

    def _on_response(self, msg) -> None:
        proposal, resp = msg
        node = self.plan.node_for(proposal.client)
        self.engine.cpu(node).submit(self.config.client_collect_work, lambda: self._collect(proposal, resp),
                                     label=f"collect {proposal.tx_id}")

    def _collect(self, proposal: TxProposal, resp: Endorsement) -> None:
        tx_id = proposal.tx_id
        rec = self.records[tx_id]
        if tx_id in self._accepted or rec.status != PENDING or rec.submit != proposal.submit_time:
            return
        responses = self._responses[tx_id]
        responses.append(resp)
        accepted, rwset, chosen = collect_and_check(responses, self.policy)
        if accepted:
            self._accepted.add(tx_id)
            rec.endorse = self.engine.now
            env = Envelope(proposal, rwset, chosen)
            node = self.plan.node_for(proposal.client)
            self.engine.send_message(node, self.orderer_node, self._envelope_bytes(env), env,
                                     self._on_envelope, label=f"envelope {tx_id}")
        elif len(responses) >= len(self.policy.eligible):
            rec.status = REJECTED
            errors = sorted({r.error for r in responses if r.error})
            rec.reason = "; ".join(errors) if errors else "endorsement mismatch"
            self.engine.log(self.plan.node_for(proposal.client), "rejected", f"{tx_id} {rec.reason}")
            self._finalize(rec)

    # ------------------------------------------------------------- step 5: ordering

    def _on_envelope(self, env: Envelope) -> None:
        # intake is cheap and never waits behind block assembly; its cost is
        # folded into the per-tx assembly work
        self.engine.log(self.orderer_node, "order", env.tx_id)
        self._enqueue(env)

    def _enqueue(self, env: Envelope) -> None:
        self._buffer.append((env, self.engine.now_us))
        if len(self._buffer) >= self.config.block_size:
            self._cut()
        elif len(self._buffer) == 1:
            self._arm_timer()

    def _arm_timer(self) -> None:
        gen = self._batch_gen
        first = self._buffer[0][1]
        when = max(self.engine.now_us, first + ms_to_us(self.config.batch_timeout_ms))

        def fire(_ev):
            if gen == self._batch_gen and self._buffer:
                self._cut()

        self.engine.at(when, "timer", fire, node=self.orderer_node, detail="batch-timeout")

    def _cut(self) -> None:
        batch = [env for env, _ in self._buffer[: self.config.block_size]]
        self._buffer = self._buffer[self.config.block_size:]
        self._batch_gen += 1
        prev = self.blocks[-1].hash() if self.blocks else ZERO_DIGEST
        block = HlfBlock(len(self.blocks), prev, tuple(batch), self.engine.now)
        self.blocks.append(block)
        for env in batch:
            self.records[env.tx_id].order = self.engine.now
        self.engine.log(self.orderer_node, "block-cut", f"seq={block.seq} txs={len(batch)}")
        if self._buffer:
            if len(self._buffer) >= self.config.block_size:
                self._cut()
            else:
                self._arm_timer()
        nbytes = self.config.block_header_bytes + sum(self._envelope_bytes(e) for e in batch)
        work = self.config.block_work_base + self.config.block_work_per_tx * len(batch)

        def broadcast():
            for role in sorted(self.peers):
                peer = self.peers[role]
                self.engine.send_message(self.orderer_node, peer.node, nbytes, (role, block),
                                         self._on_block, label=f"block {block.seq}")

        self.engine.cpu(self.orderer_node).submit(work, broadcast, label=f"assemble {block.seq}")

    # ------------------------------------------------------------- step 6-7: validate, commit

    def _on_block(self, msg) -> None:
        role, block = msg
        peer = self.peers[role]
        peer.held[block.seq] = block
        while peer.next_queued in peer.held:
            b = peer.held.pop(peer.next_queued)
            peer.next_queued += 1
            work = self.config.commit_block_work + self.config.commit_work_per_tx * len(b.txs)
            self.engine.cpu(peer.node).submit(work, lambda b=b: self.validate_and_commit(role, b),
                                              label=f"commit {b.seq}")

    def validate_and_commit(self, role: str, block: HlfBlock) -> tuple[bool, ...]:
        """Validate every tx of ``block`` against policy and read versions, apply the valid ones."""
        peer = self.peers[role]
        if block.seq != peer.height:
            raise PipelineError(f"{role}: block {block.seq} does not extend height {peer.height}")
        expected_prev = peer.chain[-1].hash() if peer.chain else ZERO_DIGEST
        if block.prev_hash != expected_prev:
            raise PipelineError(f"{role}: block {block.seq} breaks the hash chain")
        flags = []
        for env in block.txs:
            ok = env.tx_id not in peer.ledger_ids and \
                self.policy.satisfied_by(env.endorsements, env.rwset) and \
                all(peer.store.version(k) == v for k, v in env.rwset.reads)
            if ok:
                peer.store.apply(env.rwset.writes)
            flags.append(ok)
            peer.ledger_ids.add(env.tx_id)
        peer.chain.append(block)
        peer.validity.append(tuple(flags))
        peer.digests.append(peer.store.digest())
        now = self.engine.now
        self.engine.log(peer.node, "commit", f"{role} seq={block.seq} valid={sum(flags)}/{len(flags)}")
        for env, ok in zip(block.txs, flags):
            rec = self.records.get(env.tx_id)
            if rec is None:
                continue
            rec.peer_commits[role] = now
            if rec.commit is None:
                rec.commit = now
                rec.block = block.seq
                rec.status = VALID if ok else INVALID
                if not ok:
                    rec.reason = "mvcc read conflict"
                self._finalize(rec)
        return tuple(flags)

    # ------------------------------------------------------------- checks

    def replay(self, role: str | None = None) -> VersionedStore:
        """Re-apply the committed valid transactions from the genesis state."""
        peer = self.peers[role or sorted(self.peers)[0]]
        store = self.genesis_store.copy()
        for block, flags in zip(peer.chain, peer.validity):
            for env, ok in zip(block.txs, flags):
                if ok:
                    store.apply(env.rwset.writes)
        return store

    def store_digests(self) -> dict[str, str]:
        return {role: p.store.digest() for role, p in self.peers.items()}
