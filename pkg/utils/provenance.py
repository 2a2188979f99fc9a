"""
Provenance queries over committed chains: custody traces, responsible actors
and ingredient-label audits.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from utils.biometrics import ActorRegistry
from utils.errors import (
    AmbiguousStageError,
    InvalidChainError,
    ItemStageNotFoundError,
    NotRetailedError,
)
from utils.ledger import Chain, Stage, Transaction, validate_chain

logger = logging.getLogger(__name__)

Location = Tuple[int, int]


@dataclass
class VisitCounter:
    """Counts transactions dereferenced by a query."""

    visits: int = 0

    def visit(self, count: int = 1) -> None:
        self.visits += count


@dataclass(frozen=True)
class CustodyRecord:
    height: int
    tx_index: int
    stage: Stage
    event_time: int
    actor_id: int
    origin: str
    batch_number: str

    @classmethod
    def from_tx(cls, height: int, tx_index: int, tx: Transaction) -> "CustodyRecord":
        return cls(height, tx_index, tx.event.stage, tx.event.event_time,
                   tx.attestation.actor_id, tx.event.origin, tx.event.batch_number)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'height': self.height,
            'tx_index': self.tx_index,
            'stage': self.stage.name,
            'event_time': self.event_time,
            'actor_id': self.actor_id,
            'origin': self.origin,
            'batch_number': self.batch_number,
        }


@dataclass
class ItemIndex:
    """item_id -> locations in (height, tx_index) order."""

    entries: Dict[str, List[Location]] = field(default_factory=dict)

    def locations(self, item_id: str) -> List[Location]:
        return self.entries.get(item_id, [])

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, item_id: object) -> bool:
        return item_id in self.entries


class ViolationKind(str, Enum):
    UNDECLARED_INGREDIENT = 'UNDECLARED_INGREDIENT'
    PHANTOM_INGREDIENT = 'PHANTOM_INGREDIENT'


@dataclass(frozen=True)
class LabelViolation:
    kind: ViolationKind
    ingredient: str
    introduced_at: Optional[Location] = None

    def to_dict(self) -> Dict[str, Any]:
        introduced = None
        if self.introduced_at is not None:
            introduced = {'height': self.introduced_at[0], 'tx_index': self.introduced_at[1]}
        return {'kind': self.kind.value, 'ingredient': self.ingredient, 'introduced_at': introduced}


def index_chain(c: Chain) -> ItemIndex:
    """Index without validation."""
    index = ItemIndex()
    for height, tx_index, tx in c.transactions():
        index.entries.setdefault(tx.event.item_id, []).append((height, tx_index))
    return index


def build_index(c: Chain, registry: ActorRegistry, threshold: int) -> ItemIndex:
    """
    Validate c, then index it by item_id.

    Args:
        c: Committed chain
        registry: Registry used to re-verify attestations
        threshold: Match threshold for re-verification

    Returns:
        ItemIndex mapping each item_id to its (height, tx_index) locations

    Raises:
        InvalidChainError: c fails validate_chain
    """
    failure = validate_chain(c, registry, threshold)
    if failure is not None:
        raise InvalidChainError(f"Chain fails validation at height {failure.height}: {failure.failure.kind.value}")
    index = index_chain(c)
    logger.info(f"✅ Indexed {c.tx_count()} transactions across {len(index)} items")
    return index


def _tx_at(c: Chain, location: Location) -> Transaction:
    height, tx_index = location
    return c.blocks[height].transactions[tx_index]


def _item_txs(idx: ItemIndex, c: Chain, item_id: str,
              counter: Optional[VisitCounter]) -> List[Tuple[Location, Transaction]]:
    found = []
    for location in idx.locations(item_id):
        if counter is not None:
            counter.visit()
        found.append((location, _tx_at(c, location)))
    return found


def trace_item(idx: ItemIndex, c: Chain, item_id: str,
               counter: Optional[VisitCounter] = None) -> List[CustodyRecord]:
    """
    Custody history of one item.

    Args:
        idx: Index built over c
        c: The indexed chain
        item_id: Item to trace
        counter: Optional counter of dereferenced transactions

    Returns:
        CustodyRecords in (height, tx_index) order; empty for an unknown item
    """
    return [CustodyRecord.from_tx(h, i, tx) for (h, i), tx in _item_txs(idx, c, item_id, counter)]


def scan_item(c: Chain, item_id: str, counter: Optional[VisitCounter] = None) -> List[CustodyRecord]:
    """Brute-force trace over every transaction in the chain."""
    records = []
    for height, tx_index, tx in c.transactions():
        if counter is not None:
            counter.visit()
        if tx.event.item_id == item_id:
            records.append(CustodyRecord.from_tx(height, tx_index, tx))
    return records


def responsible_actor(idx: ItemIndex, c: Chain, item_id: str, stage: Stage,
                      counter: Optional[VisitCounter] = None) -> int:
    stage = Stage.parse(stage)
    matches = [(loc, tx) for loc, tx in _item_txs(idx, c, item_id, counter) if tx.event.stage == stage]
    if not matches:
        raise ItemStageNotFoundError(f"No {stage.name} event for item {item_id!r}")
    if len(matches) > 1:
        raise AmbiguousStageError(f"{len(matches)} {stage.name} events for item {item_id!r}",
                                  [loc for loc, _ in matches])
    return matches[0][1].attestation.actor_id


def audit_labels(idx: ItemIndex, c: Chain, item_id: str,
                 counter: Optional[VisitCounter] = None) -> List[LabelViolation]:
    """
    Compare every ingredient added along the item's history with the label
    declared at retail. When several RETAIL events exist the latest label is audited.

    Raises:
        NotRetailedError: the item never reached RETAIL
    """
    txs = _item_txs(idx, c, item_id, counter)
    retail = [tx for _, tx in txs if tx.event.stage == Stage.RETAIL]
    if not retail:
        raise NotRetailedError(f"Item {item_id!r} has no RETAIL event")
    declared = set(retail[-1].event.declared_label)

    introduced: Dict[str, Location] = {}
    for location, tx in txs:
        for ingredient in tx.event.ingredients_added:
            introduced.setdefault(ingredient, location)

    violations = [LabelViolation(ViolationKind.UNDECLARED_INGREDIENT, name, introduced[name])
                  for name in introduced if name not in declared]
    violations += [LabelViolation(ViolationKind.PHANTOM_INGREDIENT, name)
                   for name in declared if name not in introduced]
    violations.sort(key=lambda v: (v.ingredient, v.kind.value))
    if violations:
        logger.warning(f"⚠️ Item {item_id!r} has {len(violations)} label violation(s)")
    return violations


def to_json_list(items) -> List[Dict[str, Any]]:
    return [item.to_dict() for item in items]
