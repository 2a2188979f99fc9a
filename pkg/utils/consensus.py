"""
Permissioned quorum consensus among food-network member nodes.

Each height is decided by a single round of approve-votes: the round-robin
proposer broadcasts a block, every member validates it (biometric
re-verification included) and broadcasts its verdict, and a node commits once
it observes quorum_size(n) approvals for one block hash. An honest node
approves at most one hash per height, so two conflicting blocks can never
both gather a quorum while at most f members are faulty.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import ClassVar, Dict, List, Optional, Set, Tuple, Union

from utils.biometrics import ActorRegistry, BiometricVerifier, EncryptedTemplate
from utils.errors import (
    BBCError,
    InvalidValueError,
    NoPendingTransactionsError,
    NotMyTurnError,
)
from utils.ledger import (
    BiometricAttestation,
    Block,
    Chain,
    SupplyChainEvent,
    Transaction,
    block_hash,
    make_block,
    validate_block,
)

logger = logging.getLogger(__name__)


class NodeBehavior(str, Enum):
    HONEST = 'HONEST'
    CRASHED = 'CRASHED'
    EQUIVOCATOR = 'EQUIVOCATOR'
    TAMPERER = 'TAMPERER'
    VOTE_FLIPPER = 'VOTE_FLIPPER'

    @classmethod
    def parse(cls, value: Union[str, "NodeBehavior"]) -> "NodeBehavior":
        try:
            return cls(str(value.value if isinstance(value, NodeBehavior) else value).upper())
        except ValueError:
            raise InvalidValueError(f"Unknown node behavior: {value!r}")


def quorum_size(n: int) -> int:
    if n < 1:
        raise InvalidValueError("Node count must be at least 1")
    return (2 * n) // 3 + 1


def fault_tolerance(n: int) -> int:
    """Largest f with n >= 3f + 1."""
    return (n - 1) // 3


def proposer_for(height: int, view: int, n: int) -> int:
    if n < 1:
        raise InvalidValueError("Node count must be at least 1")
    return (height + view) % n


# Messages

@dataclass(frozen=True)
class Proposal:
    kind: ClassVar[str] = 'PROPOSAL'
    sender: int
    recipient: int
    block: Block
    proposer_id: int
    view: int


@dataclass(frozen=True)
class Vote:
    kind: ClassVar[str] = 'VOTE'
    sender: int
    recipient: int
    voter_id: int
    height: int
    block_hash: bytes
    approve: bool


@dataclass(frozen=True)
class Commit:
    kind: ClassVar[str] = 'COMMIT'
    sender: int
    recipient: int
    height: int
    block_hash: bytes
    block: Block


@dataclass(frozen=True)
class TransactionGossip:
    kind: ClassVar[str] = 'TRANSACTION'
    sender: int
    recipient: int
    tx: Transaction


Message = Union[Proposal, Vote, Commit, TransactionGossip]


@dataclass(frozen=True)
class RejectedSubmission:
    index: int
    node: int
    actor_id: int
    item_id: str
    score: Optional[int]
    reason: str

    def to_dict(self) -> Dict[str, object]:
        return {
            'index': self.index,
            'node': self.node,
            'actor_id': self.actor_id,
            'item_id': self.item_id,
            'score': self.score,
            'reason': self.reason,
        }


@dataclass
class NodeState:
    node_id: int
    n: int
    registry: ActorRegistry
    threshold: int
    behavior: NodeBehavior = NodeBehavior.HONEST
    head: Chain = field(default_factory=Chain)
    pending_txs: List[Transaction] = field(default_factory=list)
    view: int = 0
    # (height, block hash) -> approving voters
    vote_tally: Dict[Tuple[int, bytes], Set[int]] = field(default_factory=dict)
    # (height, block hash) -> nodes that announced a commit
    commit_senders: Dict[Tuple[int, bytes], Set[int]] = field(default_factory=dict)
    committed_at: Dict[int, bytes] = field(default_factory=dict)
    known_blocks: Dict[bytes, Block] = field(default_factory=dict)
    # height -> the only hash this node will approve there
    locked: Dict[int, bytes] = field(default_factory=dict)
    voted: Set[Tuple[int, int, bytes]] = field(default_factory=set)
    proposed_at: Set[Tuple[int, int]] = field(default_factory=set)
    rejected: List[RejectedSubmission] = field(default_factory=list)
    timer_generation: int = 0
    timer_armed: bool = False
    timer_request: Optional[int] = None


class ConsensusNode:
    """One member's consensus state machine. Every handler returns the messages to send."""

    def __init__(self, node_id: int, n: int, registry: ActorRegistry, threshold: int,
                 behavior: NodeBehavior = NodeBehavior.HONEST):
        if not 0 <= node_id < n:
            raise InvalidValueError(f"node_id {node_id} outside 0..{n - 1}")
        self.state = NodeState(node_id=node_id, n=n, registry=registry, threshold=int(threshold),
                               behavior=NodeBehavior.parse(behavior))
        self.verifier = BiometricVerifier(registry, threshold)
        self._now = 0

    @property
    def node_id(self) -> int:
        return self.state.node_id

    @property
    def behavior(self) -> NodeBehavior:
        return self.state.behavior

    @property
    def head(self) -> Chain:
        return self.state.head

    @property
    def next_height(self) -> int:
        return self.state.head.height + 1

    def is_proposer(self) -> bool:
        return proposer_for(self.next_height, self.state.view, self.state.n) == self.node_id

    def take_timer_request(self) -> Optional[int]:
        request, self.state.timer_request = self.state.timer_request, None
        return request

    def timer_is_live(self, generation: int) -> bool:
        return self.state.timer_armed and self.state.timer_generation == generation

    # Dispatch

    def handle(self, msg: Message, now: int) -> List[Message]:
        if self.behavior == NodeBehavior.CRASHED:
            return []
        self._now = now
        out: List[Message] = []
        self._dispatch(msg, out)
        return out

    def _dispatch(self, msg: Message, out: List[Message]) -> None:
        if isinstance(msg, Proposal):
            self._on_proposal(msg, out)
        elif isinstance(msg, Vote):
            self._on_vote(msg, out)
        elif isinstance(msg, Commit):
            self._on_commit(msg, out)
        elif isinstance(msg, TransactionGossip):
            self._on_transaction(msg.tx, out)

    def _broadcast(self, msg: Message, out: List[Message]) -> None:
        """Peers first, then local delivery."""
        for peer in range(self.state.n):
            if peer != self.node_id:
                out.append(replace(msg, recipient=peer))
        self._dispatch(replace(msg, recipient=self.node_id), out)

    # Operations

    def on_proposal(self, m: Proposal, now: int = 0) -> List[Message]:
        return self.handle(m, now)

    def on_vote(self, m: Vote, now: int = 0) -> List[Message]:
        return self.handle(m, now)

    def on_commit(self, m: Commit, now: int = 0) -> List[Message]:
        return self.handle(m, now)

    def propose(self, now: int = 0) -> List[Message]:
        """
        Build and broadcast a block at head+1 from the pending transactions.

        Raises:
            NotMyTurnError: this node is not the proposer for (head+1, view)
            NoPendingTransactionsError: nothing to propose
        """
        if not self.is_proposer():
            raise NotMyTurnError(
                f"Node {self.node_id} is not the proposer for height {self.next_height} view {self.state.view}"
            )
        if self.behavior == NodeBehavior.CRASHED:
            return []
        self._now = now
        out: List[Message] = []
        self._propose(out)
        return out

    def _propose(self, out: List[Message]) -> None:
        state = self.state
        height = self.next_height
        locked_hash = state.locked.get(height)
        if locked_hash is not None:
            block = state.known_blocks[locked_hash]
        elif state.pending_txs:
            block = make_block(state.head.tip, state.pending_txs, self._now, self.node_id)
        else:
            raise NoPendingTransactionsError(f"Node {self.node_id} has no pending transactions")
        state.proposed_at.add((height, state.view))

        if self.behavior == NodeBehavior.EQUIVOCATOR:
            self._equivocate(block, out)
            return
        if self.behavior == NodeBehavior.TAMPERER:
            block = tamper_block(block)

        logger.info(f"📦 Node {self.node_id} proposes height {height} view {state.view} "
                    f"with {len(block.transactions)} txs")
        self._broadcast(Proposal(self.node_id, self.node_id, block, self.node_id, state.view), out)

    def _equivocate(self, block: Block, out: List[Message]) -> None:
        state = self.state
        twin = make_block(state.head.tip, block.transactions, block.header.timestamp + 1, self.node_id)
        peers = [p for p in range(state.n) if p != self.node_id]
        half = len(peers) // 2
        for index, peer in enumerate(peers):
            chosen = block if index < half else twin
            out.append(Proposal(self.node_id, peer, chosen, self.node_id, state.view))
        for chosen in (block, twin):
            self._dispatch(Proposal(self.node_id, self.node_id, chosen, self.node_id, state.view), out)

    def _admit(self, m: Proposal) -> bool:
        state = self.state
        header = m.block.header
        if header.height != self.next_height:
            return False
        if m.view < state.view:
            return False
        if m.proposer_id != m.sender or m.proposer_id != proposer_for(header.height, m.view, state.n):
            return False
        # a re-proposed locked block keeps the header of the view it was built in
        if not any(proposer_for(header.height, v, state.n) == header.proposer_id
                   for v in range(min(m.view, state.n - 1) + 1)):
            return False
        return True

    def _on_proposal(self, m: Proposal, out: List[Message]) -> None:
        state = self.state
        if not self._admit(m):
            return
        height = m.block.header.height
        digest = m.block.hash
        if (height, m.view, digest) in state.voted:
            return
        if m.view > state.view:
            self._change_view(m.view)
        state.voted.add((height, m.view, digest))
        state.known_blocks.setdefault(digest, m.block)

        approve = self._verdict(m.block)
        self._broadcast(Vote(self.node_id, self.node_id, self.node_id, height, digest, approve), out)
        self._try_commit(out)
        self._arm_if_busy()

    def _verdict(self, block: Block) -> bool:
        state = self.state
        if self.behavior == NodeBehavior.EQUIVOCATOR:
            return True
        valid = validate_block(block, state.head.tip, state.registry, state.threshold) is None
        if self.behavior == NodeBehavior.VOTE_FLIPPER:
            return not valid
        height = block.header.height
        locked_hash = state.locked.get(height)
        if not valid or (locked_hash is not None and locked_hash != block.hash):
            return False
        state.locked[height] = block.hash
        return True

    def _on_vote(self, m: Vote, out: List[Message]) -> None:
        state = self.state
        if not m.approve or m.height in state.committed_at or m.height < self.next_height:
            return
        state.vote_tally.setdefault((m.height, m.block_hash), set()).add(m.voter_id)
        self._try_commit(out)

    def _on_commit(self, m: Commit, out: List[Message]) -> None:
        state = self.state
        if m.height < self.next_height or m.height in state.committed_at:
            return
        if block_hash(m.block.header) != m.block_hash or m.block.header.height != m.height:
            return
        state.known_blocks.setdefault(m.block_hash, m.block)
        state.commit_senders.setdefault((m.height, m.block_hash), set()).add(m.sender)
        self._try_commit(out)

    def _on_transaction(self, tx: Transaction, out: List[Message]) -> None:
        state = self.state
        if any(p.tx_id == tx.tx_id for p in state.pending_txs) or self._is_committed(tx.tx_id):
            return
        state.pending_txs.append(tx)
        self._arm_if_busy()
        self._maybe_propose(out)

    def _is_committed(self, tx_id: bytes) -> bool:
        return any(tx.tx_id == tx_id for _, _, tx in self.state.head.transactions())

    def _maybe_propose(self, out: List[Message]) -> None:
        state = self.state
        if not self.is_proposer() or (self.next_height, state.view) in state.proposed_at:
            return
        if state.pending_txs or self.next_height in state.locked:
            self._propose(out)

    def _try_commit(self, out: List[Message]) -> None:
        """Commit head+1 if this node has seen enough evidence; repeat while later heights are decided."""
        state = self.state
        quorum = quorum_size(state.n)
        witnesses = fault_tolerance(state.n) + 1
        while True:
            height = self.next_height
            candidates = sorted(
                {h for (ht, h), voters in state.vote_tally.items() if ht == height and len(voters) >= quorum}
                | {h for (ht, h), senders in state.commit_senders.items() if ht == height and len(senders) >= witnesses}
            )
            chosen = None
            for digest in candidates:
                block = state.known_blocks.get(digest)
                if block is not None and validate_block(block, state.head.tip, state.registry, state.threshold) is None:
                    chosen = block
                    break
            if chosen is None:
                return
            self._commit(chosen, out)

    def _commit(self, block: Block, out: List[Message]) -> None:
        state = self.state
        height = block.header.height
        digest = block.hash
        state.head = state.head.append(block)
        state.committed_at[height] = digest
        committed_ids = {tx.tx_id for tx in block.transactions}
        state.pending_txs = [tx for tx in state.pending_txs if tx.tx_id not in committed_ids]
        logger.info(f"✅ Node {self.node_id} committed height {height} ({digest.hex()[:12]})")

        self._broadcast(Commit(self.node_id, self.node_id, height, digest, block), out)
        self._rearm()
        self._prune_through(height)
        self._maybe_propose(out)

    def _prune_through(self, height: int) -> None:
        """Drop per-height bookkeeping for heights that are now committed."""
        state = self.state
        state.vote_tally = {k: v for k, v in state.vote_tally.items() if k[0] > height}
        state.commit_senders = {k: v for k, v in state.commit_senders.items() if k[0] > height}
        state.known_blocks = {d: b for d, b in state.known_blocks.items() if b.header.height > height}
        state.locked = {h: d for h, d in state.locked.items() if h > height}
        state.voted = {entry for entry in state.voted if entry[0] > height}
        state.proposed_at = {entry for entry in state.proposed_at if entry[0] > height}

    # Submissions and timers

    def submit(self, index: int, actor_id: int, probe: EncryptedTemplate, event: SupplyChainEvent,
               now: int = 0) -> List[Message]:
        """Entry-node handling of a client submission: verify, attest, gossip."""
        if self.behavior == NodeBehavior.CRASHED:
            return []
        self._now = now
        out: List[Message] = []
        try:
            decision = self.verifier.verify(actor_id, probe)
        except BBCError as e:
            self.state.rejected.append(
                RejectedSubmission(index, self.node_id, actor_id, event.item_id, None, e.code))
            logger.warning(f"❌ Submission {index} rejected at node {self.node_id}: {e.message}")
            return out
        if not decision.accepted:
            self.state.rejected.append(
                RejectedSubmission(index, self.node_id, actor_id, event.item_id, decision.score, 'NO_MATCH'))
            return out

        attestation = BiometricAttestation.from_decision(actor_id, probe, decision, self.node_id, index)
        tx = Transaction.create(event, attestation)
        self._broadcast(TransactionGossip(self.node_id, self.node_id, tx), out)
        return out

    def on_timeout(self, generation: Optional[int] = None, now: int = 0) -> List[Message]:
        """View change: rotate the proposer, keep pending transactions."""
        if self.behavior == NodeBehavior.CRASHED:
            return []
        if generation is not None and not self.timer_is_live(generation):
            return []
        self._now = now
        out: List[Message] = []
        self._change_view(self.state.view + 1)
        logger.warning(f"⚠️ Node {self.node_id} timed out at height {self.next_height}, view -> {self.state.view}")
        self._maybe_propose(out)
        return out

    def _change_view(self, view: int) -> None:
        self.state.view = view
        self._rearm()

    def _has_work(self) -> bool:
        return bool(self.state.pending_txs) or self.next_height in self.state.locked

    def _arm_if_busy(self) -> None:
        if not self.state.timer_armed and self._has_work():
            self._rearm()

    def _rearm(self) -> None:
        state = self.state
        state.timer_generation += 1
        state.timer_armed = self._has_work()
        state.timer_request = state.timer_generation if state.timer_armed else None


def tamper_block(block: Block) -> Block:
    """Flip the low bit of the first transaction's storage_temp, leaving header and tx_id alone."""
    first = block.transactions[0]
    event = replace(first.event, storage_temp=first.event.storage_temp ^ 1)
    corrupted = Transaction(event, first.attestation, first.tx_id)
    return Block(block.header, (corrupted,) + block.transactions[1:])
