"""
Deterministic discrete-event network connecting consensus nodes.

Events (messages, timer fires, client submissions) sit in one heap ordered
by (deliver_at, seq); equal ticks are delivered in insertion order. Random
drops and jitter come from separate seeded substreams.
"""

import heapq
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Sequence, Union

from utils.biometrics import EncryptedTemplate
from utils.consensus import ConsensusNode, Message, NodeBehavior
from utils.errors import BudgetExceededError, InvalidValueError
from utils.ledger import Chain, SupplyChainEvent
from utils.rng import substream

logger = logging.getLogger(__name__)


class SimStatus(Enum):
    IDLE = 'IDLE'


IDLE = SimStatus.IDLE


@dataclass(frozen=True)
class Partition:
    nodes: FrozenSet[int]
    start: int
    end: int

    def __post_init__(self):
        object.__setattr__(self, 'nodes', frozenset(int(n) for n in self.nodes))
        if self.start < 0 or self.end < self.start:
            raise InvalidValueError(f"Partition range [{self.start}, {self.end}) is invalid")

    def active(self, tick: int) -> bool:
        return self.start <= tick < self.end

    def overlaps(self, other: "Partition") -> bool:
        return self.start < other.end and other.start < self.end

    def to_dict(self) -> Dict[str, Any]:
        return {'nodes': sorted(self.nodes), 'start': self.start, 'end': self.end}


@dataclass(frozen=True)
class NetworkConfig:
    seed: int = 0
    base_delay: int = 1
    jitter: int = 0
    drop_rate: float = 0.0
    partitions: Sequence[Partition] = ()

    def __post_init__(self):
        object.__setattr__(self, 'partitions', tuple(self.partitions))
        if not 0.0 <= self.drop_rate <= 1.0:
            raise InvalidValueError(f"drop_rate must be in [0, 1], got {self.drop_rate}")
        if self.base_delay < 0 or self.jitter < 0:
            raise InvalidValueError("base_delay and jitter must be non-negative")
        for i, a in enumerate(self.partitions):
            for b in self.partitions[i + 1:]:
                if a.overlaps(b) and a.nodes & b.nodes:
                    raise InvalidValueError("Partitions active at the same time must be disjoint node sets")

    def separated(self, sender: int, recipient: int, tick: int) -> bool:
        return any(p.active(tick) and ((sender in p.nodes) != (recipient in p.nodes)) for p in self.partitions)

    @classmethod
    def from_dict(cls, data: Dict[str, Any], seed: int, base_delay: int = 1, jitter: int = 0) -> "NetworkConfig":
        return cls(
            seed=seed,
            base_delay=int(data.get('base_delay', base_delay)),
            jitter=int(data.get('jitter', jitter)),
            drop_rate=float(data.get('drop_rate', 0.0)),
            partitions=tuple(Partition(frozenset(p['nodes']), int(p['start']), int(p['end']))
                             for p in data.get('partitions', [])),
        )


@dataclass(frozen=True)
class TimerFire:
    node: int
    generation: int


@dataclass(frozen=True)
class Submission:
    index: int
    node: int
    actor_id: int
    probe: EncryptedTemplate
    event: SupplyChainEvent


Payload = Union[Message, TimerFire, Submission]


@dataclass(frozen=True, order=True)
class SimEvent:
    deliver_at: int
    seq: int
    msg: Payload = field(compare=False)


class Network:
    """Event loop, virtual clock and message fabric for a set of consensus nodes."""

    def __init__(self, nodes: Sequence[ConsensusNode], config: NetworkConfig, timeout_ticks: int = 50,
                 record_trace: bool = False):
        if timeout_ticks < 1:
            raise InvalidValueError("timeout_ticks must be at least 1")
        self.nodes = list(nodes)
        self.config = config
        self.timeout_ticks = timeout_ticks
        self.now = 0
        self._queue: List[SimEvent] = []
        self._seq = 0
        self._drops = substream(config.seed, "drops")
        self._jitter = substream(config.seed, "jitter")
        self.record_trace = record_trace
        self.trace: List[Dict[str, Any]] = []
        self.sent = 0
        self.delivered = 0
        self.dropped = 0

    def _push(self, deliver_at: int, payload: Payload) -> None:
        heapq.heappush(self._queue, SimEvent(deliver_at, self._seq, payload))
        self._seq += 1

    def _record(self, tick: int, msg: Message, outcome: str) -> None:
        if self.record_trace:
            self.trace.append({'tick': tick, 'from': msg.sender, 'to': msg.recipient,
                               'kind': msg.kind, 'outcome': outcome})

    def send(self, msg: Message, now: int) -> None:
        self.sent += 1
        self._record(now, msg, 'sent')
        lost = self._drops.random() < self.config.drop_rate
        if self.config.separated(msg.sender, msg.recipient, now):
            self.dropped += 1
            self._record(now, msg, 'dropped:partition')
            return
        if lost:
            self.dropped += 1
            self._record(now, msg, 'dropped:random')
            return
        extra = int(self._jitter.integers(0, self.config.jitter + 1))
        self._push(now + self.config.base_delay + extra, msg)

    def submit(self, tick: int, submission: Submission) -> None:
        self._push(tick, submission)

    def _after(self, node: ConsensusNode, outbox: Iterable[Message]) -> None:
        for msg in outbox:
            self.send(msg, self.now)
        generation = node.take_timer_request()
        if generation is not None:
            self._push(self.now + self.timeout_ticks, TimerFire(node.node_id, generation))

    def _is_stale(self, event: SimEvent) -> bool:
        payload = event.msg
        return isinstance(payload, TimerFire) and not self.nodes[payload.node].timer_is_live(payload.generation)

    def _discard_stale(self) -> None:
        while self._queue and self._is_stale(self._queue[0]):
            heapq.heappop(self._queue)

    @property
    def in_flight(self) -> int:
        return sum(1 for e in self._queue if not isinstance(e.msg, (TimerFire, Submission)))

    def peek_tick(self) -> Optional[int]:
        self._discard_stale()
        return self._queue[0].deliver_at if self._queue else None

    def step(self) -> Union[Payload, SimStatus]:
        """Deliver the least (deliver_at, seq) event; IDLE when nothing is left."""
        self._discard_stale()
        if not self._queue:
            return IDLE
        event = heapq.heappop(self._queue)
        self.now = max(self.now, event.deliver_at)
        payload = event.msg

        if isinstance(payload, TimerFire):
            node = self.nodes[payload.node]
            self._after(node, node.on_timeout(payload.generation, self.now))
        elif isinstance(payload, Submission):
            node = self.nodes[payload.node]
            self._after(node, node.submit(payload.index, payload.actor_id, payload.probe, payload.event, self.now))
        else:
            self.delivered += 1
            self._record(self.now, payload, 'delivered')
            node = self.nodes[payload.recipient]
            self._after(node, node.handle(payload, self.now))
        return payload

    def run_until_quiet(self, max_ticks: int) -> int:
        """Step until IDLE; BudgetExceededError if work remains past max_ticks."""
        if max_ticks <= 0:
            raise InvalidValueError("max_ticks must be positive")
        while True:
            tick = self.peek_tick()
            if tick is None:
                return self.now
            if tick > max_ticks:
                logger.warning(f"⚠️ Tick budget {max_ticks} exceeded with work pending")
                raise BudgetExceededError(f"Tick budget {max_ticks} exceeded with work pending", self.now)
            self.step()

    # Inspection

    def honest_nodes(self) -> List[ConsensusNode]:
        return [node for node in self.nodes if node.behavior == NodeBehavior.HONEST]

    def honest_heads_identical(self) -> bool:
        heads = [node.head for node in self.honest_nodes()]
        return all(head == heads[0] for head in heads[1:])

    def chain_of(self, node_id: int) -> Chain:
        return self.nodes[node_id].head

    def rejected(self) -> List[Dict[str, Any]]:
        records = [r for node in self.nodes for r in node.state.rejected]
        return [r.to_dict() for r in sorted(records, key=lambda r: r.index)]

    def counters(self) -> Dict[str, int]:
        return {'sent': self.sent, 'delivered': self.delivered, 'dropped': self.dropped, 'in_flight': self.in_flight}

    def trace_lines(self) -> List[str]:
        return [json.dumps(record, sort_keys=True) for record in self.trace]

    def write_trace(self, path: str) -> None:
        with open(path, 'w', encoding='utf-8') as f:
            for line in self.trace_lines():
                f.write(line + '\n')


def build_network(n: int, registry, threshold: int, behaviors: Optional[Sequence[Union[str, NodeBehavior]]] = None,
                  config: Optional[NetworkConfig] = None, timeout_ticks: int = 50,
                  record_trace: bool = False) -> Network:
    behaviors = list(behaviors) if behaviors is not None else [NodeBehavior.HONEST] * n
    if len(behaviors) != n:
        raise InvalidValueError(f"Expected {n} behaviors, got {len(behaviors)}")
    nodes = [ConsensusNode(i, n, registry, threshold, NodeBehavior.parse(b)) for i, b in enumerate(behaviors)]
    return Network(nodes, config or NetworkConfig(), timeout_ticks, record_trace)
