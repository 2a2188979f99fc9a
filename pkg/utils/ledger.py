"""
Tamper-evident ledger: supply-chain transactions with biometric
attestations, Merkle-rooted blocks, hash-chained headers and whole-chain
validation.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from functools import cached_property
from typing import Any, Dict, Iterator, Optional, Sequence, Tuple, Union

from utils.biometrics import (
    ActorRegistry,
    EncryptedTemplate,
    MatchDecision,
    check_u32,
    check_u64,
    verify,
)
from utils.codec import Decoder, Encoder
from utils.constants import BLOCK_VERSION, HASH_SIZE, TEMPLATE_DIM
from utils.errors import (
    BBCError,
    ChainFormatError,
    EmptyBlockError,
    InvalidValueError,
    UnattestedTransactionError,
)

logger = logging.getLogger(__name__)

ZERO_HASH = bytes(HASH_SIZE)
LEAF_PREFIX = b'\x00'
NODE_PREFIX = b'\x01'
I32_MIN, I32_MAX = -2 ** 31, 2 ** 31 - 1


class Stage(IntEnum):
    FARM = 0
    PROCESSING = 1
    SHIPPING = 2
    RETAIL = 3

    @classmethod
    def parse(cls, value: Union[str, int, "Stage"]) -> "Stage":
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise InvalidValueError(f"Unknown stage: {value!r}")
        try:
            return cls(int(value))
        except ValueError:
            raise InvalidValueError(f"Unknown stage: {value!r}")


def _check_hash(name: str, value: bytes) -> bytes:
    value = bytes(value)
    if len(value) != HASH_SIZE:
        raise InvalidValueError(f"{name} must be {HASH_SIZE} bytes, got {len(value)}")
    return value


def _check_str(name: str, value: object) -> str:
    if not isinstance(value, str):
        raise InvalidValueError(f"{name} must be a string, got {type(value).__name__}")
    return value


def _check_str_list(name: str, values: object) -> Tuple[str, ...]:
    """A list or tuple of strings; a bare string is rejected rather than split into characters."""
    if not isinstance(values, (list, tuple)):
        raise InvalidValueError(f"{name} must be a list of strings, got {type(values).__name__}")
    for value in values:
        _check_str(f"{name} entry", value)
    return tuple(values)


@dataclass(frozen=True)
class SupplyChainEvent:
    item_id: str
    stage: Stage
    batch_number: str
    origin: str
    storage_temp: int
    expiry: int
    event_time: int
    ingredients_added: Tuple[str, ...] = ()
    declared_label: Tuple[str, ...] = ()

    def __post_init__(self):
        for name in ('item_id', 'batch_number', 'origin'):
            _check_str(name, getattr(self, name))
        object.__setattr__(self, 'stage', Stage.parse(self.stage))
        object.__setattr__(self, 'ingredients_added', _check_str_list('ingredients_added', self.ingredients_added))
        object.__setattr__(self, 'declared_label', _check_str_list('declared_label', self.declared_label))
        if not I32_MIN <= int(self.storage_temp) <= I32_MAX:
            raise InvalidValueError(f"storage_temp {self.storage_temp} outside the signed 32-bit range")
        object.__setattr__(self, 'storage_temp', int(self.storage_temp))
        object.__setattr__(self, 'expiry', check_u64('expiry', self.expiry))
        object.__setattr__(self, 'event_time', check_u64('event_time', self.event_time))
        if self.declared_label and self.stage != Stage.RETAIL:
            raise InvalidValueError("declared_label must be empty unless stage is RETAIL")
        if len(set(self.ingredients_added)) != len(self.ingredients_added):
            raise InvalidValueError("ingredients_added entries must be unique within an event")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'item_id': self.item_id,
            'stage': self.stage.name,
            'batch_number': self.batch_number,
            'origin': self.origin,
            'storage_temp': self.storage_temp,
            'expiry': self.expiry,
            'event_time': self.event_time,
            'ingredients_added': list(self.ingredients_added),
            'declared_label': list(self.declared_label),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SupplyChainEvent":
        return cls(
            item_id=data['item_id'],
            stage=Stage.parse(data['stage']),
            batch_number=data.get('batch_number', ''),
            origin=data.get('origin', ''),
            storage_temp=data.get('storage_temp', 0),
            expiry=data.get('expiry', 0),
            event_time=data.get('event_time', 0),
            ingredients_added=data.get('ingredients_added', ()),
            declared_label=data.get('declared_label', ()),
        )


@dataclass(frozen=True)
class BiometricAttestation:
    actor_id: int
    encrypted_probe: EncryptedTemplate
    match_score: int
    accepted: bool
    verifier_node: int
    nonce: int

    def __post_init__(self):
        if not isinstance(self.encrypted_probe, EncryptedTemplate):
            raise InvalidValueError("Attestations carry scrambled-domain probes only")
        object.__setattr__(self, 'actor_id', check_u32('actor_id', self.actor_id))
        object.__setattr__(self, 'match_score', check_u64('match_score', self.match_score))
        object.__setattr__(self, 'accepted', bool(self.accepted))
        object.__setattr__(self, 'verifier_node', check_u32('verifier_node', self.verifier_node))
        object.__setattr__(self, 'nonce', check_u64('nonce', self.nonce))

    @classmethod
    def from_decision(cls, actor_id: int, probe: EncryptedTemplate, decision: MatchDecision,
                      verifier_node: int, nonce: int) -> "BiometricAttestation":
        return cls(actor_id, probe, decision.score, decision.accepted, verifier_node, nonce)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'actor_id': self.actor_id,
            'encrypted_probe': self.encrypted_probe.to_dict(),
            'match_score': self.match_score,
            'accepted': self.accepted,
            'verifier_node': self.verifier_node,
            'nonce': self.nonce,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BiometricAttestation":
        return cls(
            actor_id=data['actor_id'],
            encrypted_probe=EncryptedTemplate.from_dict(data['encrypted_probe']),
            match_score=data['match_score'],
            accepted=data['accepted'],
            verifier_node=data['verifier_node'],
            nonce=data['nonce'],
        )


@dataclass(frozen=True)
class Transaction:
    event: SupplyChainEvent
    attestation: BiometricAttestation
    tx_id: bytes

    def __post_init__(self):
        object.__setattr__(self, 'tx_id', _check_hash('tx_id', self.tx_id))

    @classmethod
    def create(cls, event: SupplyChainEvent, attestation: BiometricAttestation) -> "Transaction":
        return cls(event, attestation, hashlib.sha256(encode_transaction_body(event, attestation)).digest())

    @cached_property
    def encoded(self) -> bytes:
        return encode_transaction_body(self.event, self.attestation)

    def compute_tx_id(self) -> bytes:
        return hashlib.sha256(self.encoded).digest()

    def to_dict(self) -> Dict[str, Any]:
        return {'event': self.event.to_dict(), 'attestation': self.attestation.to_dict(), 'tx_id': self.tx_id.hex()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Transaction":
        return cls(
            event=SupplyChainEvent.from_dict(data['event']),
            attestation=BiometricAttestation.from_dict(data['attestation']),
            tx_id=bytes.fromhex(data['tx_id']),
        )


@dataclass(frozen=True)
class BlockHeader:
    version: int
    height: int
    prev_hash: bytes
    merkle_root: bytes
    timestamp: int
    proposer_id: int

    def __post_init__(self):
        object.__setattr__(self, 'version', check_u32('version', self.version))
        object.__setattr__(self, 'height', check_u64('height', self.height))
        object.__setattr__(self, 'prev_hash', _check_hash('prev_hash', self.prev_hash))
        object.__setattr__(self, 'merkle_root', _check_hash('merkle_root', self.merkle_root))
        object.__setattr__(self, 'timestamp', check_u64('timestamp', self.timestamp))
        object.__setattr__(self, 'proposer_id', check_u32('proposer_id', self.proposer_id))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'version': self.version,
            'height': self.height,
            'prev_hash': self.prev_hash.hex(),
            'merkle_root': self.merkle_root.hex(),
            'timestamp': self.timestamp,
            'proposer_id': self.proposer_id,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BlockHeader":
        return cls(
            version=data['version'],
            height=data['height'],
            prev_hash=bytes.fromhex(data['prev_hash']),
            merkle_root=bytes.fromhex(data['merkle_root']),
            timestamp=data['timestamp'],
            proposer_id=data['proposer_id'],
        )


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    transactions: Tuple[Transaction, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'transactions', tuple(self.transactions))

    @property
    def height(self) -> int:
        return self.header.height

    @cached_property
    def hash(self) -> bytes:
        return block_hash(self.header)

    def to_dict(self) -> Dict[str, Any]:
        return {'header': self.header.to_dict(), 'transactions': [tx.to_dict() for tx in self.transactions]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Block":
        return cls(
            header=BlockHeader.from_dict(data['header']),
            transactions=tuple(Transaction.from_dict(tx) for tx in data['transactions']),
        )


def genesis_block() -> Block:
    return Block(BlockHeader(BLOCK_VERSION, 0, ZERO_HASH, ZERO_HASH, 0, 0), ())


@dataclass(frozen=True)
class Chain:
    blocks: Tuple[Block, ...] = field(default_factory=lambda: (genesis_block(),))

    def __post_init__(self):
        object.__setattr__(self, 'blocks', tuple(self.blocks))

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return self.tip.header.height

    def append(self, block: Block) -> "Chain":
        return Chain(self.blocks + (block,))

    def __len__(self) -> int:
        return len(self.blocks)

    def transactions(self) -> Iterator[Tuple[int, int, Transaction]]:
        """(height, tx_index, tx) in commit order."""
        for block in self.blocks:
            for index, tx in enumerate(block.transactions):
                yield block.header.height, index, tx

    def tx_count(self) -> int:
        return sum(len(block.transactions) for block in self.blocks)

    def to_dict(self) -> Dict[str, Any]:
        return {'blocks': [block.to_dict() for block in self.blocks]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Chain":
        return cls(tuple(Block.from_dict(b) for b in data['blocks']))


# Canonical encoding

def _encode_event(enc: Encoder, event: SupplyChainEvent) -> None:
    (enc.string(event.item_id)
        .u8(event.stage)
        .string(event.batch_number)
        .string(event.origin)
        .i32(event.storage_temp)
        .u64(event.expiry)
        .u64(event.event_time)
        .strings(event.ingredients_added)
        .strings(event.declared_label))


def _encode_attestation(enc: Encoder, att: BiometricAttestation) -> None:
    (enc.u32(att.actor_id)
        .u32(att.encrypted_probe.key_id)
        .i16_vector(att.encrypted_probe.values)
        .u64(att.match_score)
        .boolean(att.accepted)
        .u32(att.verifier_node)
        .u64(att.nonce))


def encode_transaction_body(event: SupplyChainEvent, attestation: BiometricAttestation) -> bytes:
    enc = Encoder()
    _encode_event(enc, event)
    _encode_attestation(enc, attestation)
    return enc.to_bytes()


def encode_header(header: BlockHeader) -> bytes:
    return (Encoder()
            .u32(header.version)
            .u64(header.height)
            .raw(header.prev_hash)
            .raw(header.merkle_root)
            .u64(header.timestamp)
            .u32(header.proposer_id)
            .to_bytes())


def canonical_encode(x: Union[Transaction, BlockHeader]) -> bytes:
    """Canonical bytes; a transaction's own tx_id is not part of its encoding."""
    if isinstance(x, Transaction):
        return x.encoded
    if isinstance(x, BlockHeader):
        return encode_header(x)
    raise InvalidValueError(f"No canonical encoding for {type(x).__name__}")


def _wrap_invalid(exc: BBCError) -> ChainFormatError:
    return exc if isinstance(exc, ChainFormatError) else ChainFormatError(f"Invalid field value: {exc.message}")


def decode_event(dec: Decoder) -> SupplyChainEvent:
    item_id = dec.string()
    stage = dec.u8()
    batch_number = dec.string()
    origin = dec.string()
    storage_temp = dec.i32()
    expiry = dec.u64()
    event_time = dec.u64()
    ingredients = dec.strings()
    label = dec.strings()
    try:
        return SupplyChainEvent(item_id, Stage.parse(stage), batch_number, origin,
                                storage_temp, expiry, event_time, ingredients, label)
    except BBCError as e:
        raise _wrap_invalid(e)


def decode_attestation(dec: Decoder) -> BiometricAttestation:
    actor_id = dec.u32()
    key_id = dec.u32()
    values = dec.i16_vector(TEMPLATE_DIM)
    match_score = dec.u64()
    accepted = dec.boolean()
    verifier_node = dec.u32()
    nonce = dec.u64()
    return BiometricAttestation(actor_id, EncryptedTemplate(key_id, values), match_score,
                                accepted, verifier_node, nonce)


def decode_header(dec: Decoder) -> BlockHeader:
    return BlockHeader(
        version=dec.u32(),
        height=dec.u64(),
        prev_hash=dec.raw(HASH_SIZE),
        merkle_root=dec.raw(HASH_SIZE),
        timestamp=dec.u64(),
        proposer_id=dec.u32(),
    )


def _decode_stored_tx(dec: Decoder) -> Transaction:
    event = decode_event(dec)
    attestation = decode_attestation(dec)
    return Transaction(event, attestation, dec.raw(HASH_SIZE))


def encode_block(block: Block) -> bytes:
    """Stored form: header bytes, u32 tx count, then per tx canonical bytes + tx_id."""
    enc = Encoder().raw(encode_header(block.header)).u32(len(block.transactions))
    for tx in block.transactions:
        enc.raw(tx.encoded).raw(tx.tx_id)
    return enc.to_bytes()


def decode_block(dec: Decoder) -> Block:
    header = decode_header(dec)
    return Block(header, dec.sequence(lambda: _decode_stored_tx(dec)))


# Hashing

def block_hash(header: BlockHeader) -> bytes:
    return hashlib.sha256(encode_header(header)).digest()


def merkle_root(txs: Sequence[Transaction]) -> bytes:
    """Domain-separated Merkle root; an odd level duplicates its last node."""
    if not txs:
        return ZERO_HASH
    level = [hashlib.sha256(LEAF_PREFIX + canonical_encode(tx)).digest() for tx in txs]
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [hashlib.sha256(NODE_PREFIX + level[i] + level[i + 1]).digest()
                 for i in range(0, len(level), 2)]
    return level[0]


def make_block(prev: Block, txs: Sequence[Transaction], timestamp: int, proposer_id: int) -> Block:
    """
    Build the block that extends prev.

    Args:
        prev: Block at the current head
        txs: Attested transactions, in block order
        timestamp: Proposer's tick
        proposer_id: Node id written into the header

    Returns:
        Block at prev.height + 1 whose header links to prev and commits to txs

    Raises:
        EmptyBlockError: txs is empty
        UnattestedTransactionError: a transaction carries a rejected attestation
    """
    if not txs:
        raise EmptyBlockError("A block must carry at least one transaction")
    for index, tx in enumerate(txs):
        if not tx.attestation.accepted:
            raise UnattestedTransactionError(f"Transaction {index} carries a rejected attestation")
    header = BlockHeader(
        version=BLOCK_VERSION,
        height=prev.header.height + 1,
        prev_hash=block_hash(prev.header),
        merkle_root=merkle_root(txs),
        timestamp=timestamp,
        proposer_id=proposer_id,
    )
    return Block(header, tuple(txs))


# Validation

class FailureKind(str, Enum):
    BAD_HEIGHT = 'BAD_HEIGHT'
    BAD_LINK = 'BAD_LINK'
    BAD_MERKLE = 'BAD_MERKLE'
    BAD_TXID = 'BAD_TXID'
    BAD_ATTESTATION = 'BAD_ATTESTATION'
    EMPTY_BLOCK = 'EMPTY_BLOCK'
    BAD_GENESIS = 'BAD_GENESIS'
    BAD_HEAD = 'BAD_HEAD'
    MALFORMED_BLOCK = 'MALFORMED_BLOCK'


@dataclass(frozen=True)
class ValidationFailure:
    kind: FailureKind
    tx_index: Optional[int] = None
    detail: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {'failure_kind': self.kind.value, 'tx_index': self.tx_index, 'detail': self.detail}


@dataclass(frozen=True)
class ChainFailure:
    height: int
    failure: ValidationFailure

    def to_dict(self) -> Dict[str, Any]:
        return {'height': self.height, **self.failure.to_dict()}


def reverify_attestation(att: BiometricAttestation, registry: ActorRegistry, threshold: int) -> Optional[str]:
    """Returns None when the attestation reproduces exactly, else the reason."""
    if att.actor_id not in registry:
        return f"actor {att.actor_id} is not enrolled"
    record = registry.get(att.actor_id)
    if att.encrypted_probe.key_id != record.enrolled.key_id:
        return f"probe key {att.encrypted_probe.key_id} differs from enrolled key {record.enrolled.key_id}"
    decision = verify(att.encrypted_probe, record, threshold)
    if decision.score != att.match_score:
        return f"score {att.match_score} does not reproduce ({decision.score})"
    if decision.accepted != att.accepted:
        return "verdict does not reproduce"
    if not att.accepted:
        return "attestation was rejected"
    return None


def validate_block(b: Block, prev: Block, registry: ActorRegistry, threshold: int) -> Optional[ValidationFailure]:
    """
    Checks, in order: height continuity, prev_hash linkage, Merkle root,
    every tx_id, every attestation. Returns the first failure, or None.
    """
    if b.header.height != prev.header.height + 1:
        return ValidationFailure(FailureKind.BAD_HEIGHT, detail=f"height {b.header.height} after {prev.header.height}")
    if b.header.prev_hash != block_hash(prev.header):
        return ValidationFailure(FailureKind.BAD_LINK)
    if b.header.merkle_root != merkle_root(b.transactions):
        return ValidationFailure(FailureKind.BAD_MERKLE)
    for index, tx in enumerate(b.transactions):
        if tx.tx_id != tx.compute_tx_id():
            return ValidationFailure(FailureKind.BAD_TXID, index)
    for index, tx in enumerate(b.transactions):
        reason = reverify_attestation(tx.attestation, registry, threshold)
        if reason is not None:
            return ValidationFailure(FailureKind.BAD_ATTESTATION, index, reason)
    if not b.transactions:
        return ValidationFailure(FailureKind.EMPTY_BLOCK)
    return None


def validate_chain(c: Chain, registry: ActorRegistry, threshold: int,
                   expected_head: Optional[bytes] = None) -> Optional[ChainFailure]:
    """First failing height, or None when the whole chain verifies."""
    if not c.blocks or c.blocks[0] != genesis_block():
        return ChainFailure(0, ValidationFailure(FailureKind.BAD_GENESIS))
    for height in range(1, len(c.blocks)):
        failure = validate_block(c.blocks[height], c.blocks[height - 1], registry, threshold)
        if failure is not None:
            logger.info(f"⚠️ Chain fails at height {height}: {failure.kind.value}")
            return ChainFailure(height, failure)
    if expected_head is not None and c.tip.hash != expected_head:
        return ChainFailure(len(c.blocks) - 1, ValidationFailure(FailureKind.BAD_HEAD))
    return None
