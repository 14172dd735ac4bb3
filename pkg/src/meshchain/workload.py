"""Parallel bursts and sequential streams of transactions."""
from __future__ import annotations

from dataclasses import dataclass, field

from .engine import ms_to_us
from .hlf import HlfNetwork
from .poa import PoaNetwork
from .records import TxRecord


class WorkloadError(ValueError):
    pass


@dataclass
class WorkloadSpec:
    """``call`` is ``(function, args)`` for HLF or ``(sender, to, value)`` for PoA.

    ``target`` is a client role name on HLF and an entry node id on PoA; when
    empty the client role's node is used.
    """

    mode: str = "parallel"
    n: int = 100
    target: str = ""
    call: tuple = ("sendMoney", ("alice", "1", "+"))
    start_time: float = 0.0
    id_prefix: str = "w"

    def __post_init__(self):
        if self.mode not in ("parallel", "sequential"):
            raise WorkloadError(f"mode must be parallel or sequential, got {self.mode!r}")
        if self.n < 1:
            raise WorkloadError("n must be at least 1")
        if self.start_time < 0:
            raise WorkloadError("start_time must be non-negative")

    def tx_id(self, k: int) -> str:
        return f"{self.id_prefix}{k:06d}"


def _resolve(net, spec: WorkloadSpec) -> str:
    if isinstance(net, HlfNetwork):
        target = spec.target or "client"
        if target not in net.plan.role_assignment:
            raise WorkloadError(f"invalid target {target!r}: no such client role")
        return target
    target = spec.target or net.plan.node_for("client")
    if target not in net.sites():
        raise WorkloadError(f"invalid target {target!r}: node runs no blockchain role")
    return target


def _submit(net, target: str, spec: WorkloadSpec, k: int) -> str:
    tx_id = spec.tx_id(k)
    if isinstance(net, HlfNetwork):
        fn, args = spec.call
        return net.submit_tx((fn, list(args)), client=target, tx_id=tx_id)
    sender, to, value = spec.call
    return net.send_transaction(target, sender, to, int(value), tx_id=tx_id)


def fire_parallel(net: HlfNetwork | PoaNetwork, spec: WorkloadSpec) -> list[str]:
    """Submit all ``n`` transactions at the same virtual instant ``start_time``."""
    target = _resolve(net, spec)
    ids = [spec.tx_id(k) for k in range(1, spec.n + 1)]

    def burst(_ev=None):
        for k in range(1, spec.n + 1):
            _submit(net, target, spec, k)

    if ms_to_us(spec.start_time) <= net.engine.now_us:
        burst()
    else:
        net.engine.at(ms_to_us(spec.start_time), "timer", burst, node="-", detail="workload parallel")
    return ids


@dataclass
class _Stream:
    net: object
    target: str
    spec: WorkloadSpec
    sent: int = 0
    ids: set = field(default_factory=set)

    def next(self, _ev=None) -> None:
        if self.sent >= self.spec.n:
            return
        self.sent += 1
        self.ids.add(_submit(self.net, self.target, self.spec, self.sent))

    def on_final(self, rec: TxRecord) -> None:
        if rec.tx_id in self.ids:
            self.next()


def fire_sequential(net: HlfNetwork | PoaNetwork, spec: WorkloadSpec) -> list[str]:
    """Submit transaction k+1 the moment transaction k commits (or otherwise finishes)."""
    target = _resolve(net, spec)
    stream = _Stream(net, target, spec)
    net.on_final(stream.on_final)
    if ms_to_us(spec.start_time) <= net.engine.now_us:
        stream.next()
    else:
        net.engine.at(ms_to_us(spec.start_time), "timer", stream.next, node="-", detail="workload sequential")
    return [spec.tx_id(k) for k in range(1, spec.n + 1)]


def fire(net: HlfNetwork | PoaNetwork, spec: WorkloadSpec) -> list[str]:
    return (fire_parallel if spec.mode == "parallel" else fire_sequential)(net, spec)
