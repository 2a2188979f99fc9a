"""
Biometric identity service: synthetic templates, the scrambling transform,
actor enrollment and encrypted-domain verification.

The scrambling transform (index permutation plus per-coordinate sign flip)
is an exact isometry of the squared Euclidean distance, so a probe can be
matched against an enrolled template without either side being unscrambled.
"""

import logging
from dataclasses import dataclass
from enum import IntEnum
from typing import Any, Dict, Iterator, Tuple, Union

import numpy as np

from utils.constants import GENUINE_NOISE, INT16_MAX, INT16_MIN, TEMPLATE_DIM, TEMPLATE_SPREAD
from utils.errors import (
    DuplicateActorError,
    InvalidValueError,
    KeyMismatchError,
    ScrambleOverflowError,
    TemplateRangeError,
    UnknownActorError,
)

logger = logging.getLogger(__name__)

U32_MAX = 2 ** 32 - 1
U64_MAX = 2 ** 64 - 1


class ActorRole(IntEnum):
    FARMER = 0
    PROCESSOR = 1
    SHIPPER = 2
    RETAILER = 3

    @classmethod
    def parse(cls, value: Union[str, int, "ActorRole"]) -> "ActorRole":
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise InvalidValueError(f"Unknown actor role: {value!r}")
        return cls(int(value))


def check_u32(name: str, value: int) -> int:
    value = int(value)
    if not 0 <= value <= U32_MAX:
        raise InvalidValueError(f"{name} must fit in an unsigned 32-bit integer, got {value}")
    return value


def check_u64(name: str, value: int) -> int:
    value = int(value)
    if not 0 <= value <= U64_MAX:
        raise InvalidValueError(f"{name} must fit in an unsigned 64-bit integer, got {value}")
    return value


def _check_vector(values) -> Tuple[int, ...]:
    vector = tuple(int(v) for v in values)
    if len(vector) != TEMPLATE_DIM:
        raise InvalidValueError(f"Template must have {TEMPLATE_DIM} values, got {len(vector)}")
    for v in vector:
        if not INT16_MIN <= v <= INT16_MAX:
            raise InvalidValueError(f"Template value {v} outside the signed 16-bit range")
    return vector


@dataclass(frozen=True)
class BiometricTemplate:
    """Raw-domain feature vector, fixed point with scale 1/1024."""

    values: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, 'values', _check_vector(self.values))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.int64)

    def to_dict(self) -> Dict[str, Any]:
        return {'values': list(self.values)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BiometricTemplate":
        return cls(tuple(data['values']))


@dataclass(frozen=True)
class ScramblingKey:
    key_id: int
    permutation: Tuple[int, ...]
    signs: Tuple[int, ...]
    seed_note: str = ""

    def __post_init__(self):
        object.__setattr__(self, 'key_id', check_u32('key_id', self.key_id))
        permutation = tuple(int(i) for i in self.permutation)
        if sorted(permutation) != list(range(TEMPLATE_DIM)):
            raise InvalidValueError("Key permutation is not a bijection on template indices")
        signs = tuple(int(s) for s in self.signs)
        if len(signs) != TEMPLATE_DIM or any(s not in (-1, 1) for s in signs):
            raise InvalidValueError(f"Key signs must be {TEMPLATE_DIM} entries of +1/-1")
        object.__setattr__(self, 'permutation', permutation)
        object.__setattr__(self, 'signs', signs)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'key_id': self.key_id,
            'seed_note': self.seed_note,
            'permutation': list(self.permutation),
            'signs': list(self.signs),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ScramblingKey":
        return cls(
            key_id=data['key_id'],
            permutation=tuple(data['permutation']),
            signs=tuple(data['signs']),
            seed_note=data.get('seed_note', ''),
        )


@dataclass(frozen=True)
class EncryptedTemplate:
    """Scrambled-domain template; the only biometric form allowed on the ledger."""

    key_id: int
    values: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, 'key_id', check_u32('key_id', self.key_id))
        object.__setattr__(self, 'values', _check_vector(self.values))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.int64)

    def to_dict(self) -> Dict[str, Any]:
        return {'key_id': self.key_id, 'values': list(self.values)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EncryptedTemplate":
        return cls(key_id=data['key_id'], values=tuple(data['values']))


@dataclass(frozen=True)
class ActorRecord:
    actor_id: int
    role: ActorRole
    enrolled: EncryptedTemplate

    def __post_init__(self):
        object.__setattr__(self, 'actor_id', check_u32('actor_id', self.actor_id))
        object.__setattr__(self, 'role', ActorRole.parse(self.role))
        if not isinstance(self.enrolled, EncryptedTemplate):
            raise InvalidValueError("ActorRecord.enrolled must be an EncryptedTemplate")

    def to_dict(self) -> Dict[str, Any]:
        return {'actor_id': self.actor_id, 'role': self.role.name, 'enrolled': self.enrolled.to_dict()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ActorRecord":
        return cls(
            actor_id=data['actor_id'],
            role=ActorRole.parse(data['role']),
            enrolled=EncryptedTemplate.from_dict(data['enrolled']),
        )


@dataclass(frozen=True)
class MatchDecision:
    score: int
    threshold: int
    accepted: bool

    def __post_init__(self):
        if self.accepted != (self.score <= self.threshold):
            raise InvalidValueError("MatchDecision.accepted must equal score <= threshold")

    @classmethod
    def decide(cls, score: int, threshold: int) -> "MatchDecision":
        return cls(score=int(score), threshold=int(threshold), accepted=int(score) <= int(threshold))

    def to_dict(self) -> Dict[str, Any]:
        return {'score': self.score, 'threshold': self.threshold, 'accepted': self.accepted}


def derive_key(seed: int, key_id: int) -> ScramblingKey:
    """Deterministic key from (seed, key_id)."""
    seed = check_u64('seed', seed)
    key_id = check_u32('key_id', key_id)
    rng = np.random.default_rng(np.random.SeedSequence([seed, key_id]))
    permutation = rng.permutation(TEMPLATE_DIM)
    coins = rng.integers(0, 2, size=TEMPLATE_DIM)
    signs = np.where(coins == 1, 1, -1)
    return ScramblingKey(
        key_id=key_id,
        permutation=tuple(int(i) for i in permutation),
        signs=tuple(int(s) for s in signs),
        seed_note=f"derive_key(seed={seed}, key_id={key_id})",
    )


def scramble(template: BiometricTemplate, key: ScramblingKey) -> EncryptedTemplate:
    """output[i] = signs[i] * template[permutation[i]]"""
    raw = template.as_array()
    permutation = np.asarray(key.permutation, dtype=np.int64)
    signs = np.asarray(key.signs, dtype=np.int64)
    picked = raw[permutation]
    if np.any((picked == INT16_MIN) & (signs == -1)):
        raise ScrambleOverflowError("Sign flip of -32768 leaves the signed 16-bit range")
    return EncryptedTemplate(key_id=key.key_id, values=tuple(int(v) for v in signs * picked))


Template = Union[BiometricTemplate, EncryptedTemplate]


def distance(a: Template, b: Template) -> int:
    """Exact squared Euclidean distance in fixed-point units squared."""
    if type(a) is not type(b):
        raise InvalidValueError("distance() operands must be in the same domain")
    if isinstance(a, EncryptedTemplate) and a.key_id != b.key_id:
        raise KeyMismatchError(f"Templates scrambled under different keys ({a.key_id} != {b.key_id})")
    diff = a.as_array() - b.as_array()
    return int(np.dot(diff, diff))


def verify(probe: EncryptedTemplate, record: ActorRecord, threshold: int) -> MatchDecision:
    """
    Match a scrambled probe against an enrolled record.

    Args:
        probe: Probe scrambled under the actor's key
        record: Enrolled actor record
        threshold: Largest accepted squared distance

    Returns:
        MatchDecision with the exact score; accepted iff score <= threshold

    Raises:
        KeyMismatchError: probe and record use different keys
    """
    if probe.key_id != record.enrolled.key_id:
        raise KeyMismatchError(
            f"Probe key {probe.key_id} does not match actor {record.actor_id} key {record.enrolled.key_id}"
        )
    return MatchDecision.decide(distance(probe, record.enrolled), threshold)


def random_template(rng: np.random.Generator, spread: int = TEMPLATE_SPREAD) -> BiometricTemplate:
    values = rng.integers(-spread, spread + 1, size=TEMPLATE_DIM)
    return BiometricTemplate(tuple(int(v) for v in values))


def noisy_probe(template: BiometricTemplate, rng: np.random.Generator, noise: int = GENUINE_NOISE) -> BiometricTemplate:
    """Genuine re-capture: per-coordinate noise uniform in [-noise, +noise]."""
    jitter = rng.integers(-noise, noise + 1, size=TEMPLATE_DIM)
    values = np.clip(template.as_array() + jitter, INT16_MIN, INT16_MAX)
    return BiometricTemplate(tuple(int(v) for v in values))


class ActorRegistry:
    """Enrolled actors keyed by actor_id. Single writer; holds no raw templates."""

    def __init__(self):
        self._records: Dict[int, ActorRecord] = {}

    def enroll(self, actor_id: int, role: ActorRole, template: BiometricTemplate, key: ScramblingKey) -> ActorRecord:
        """
        Scramble a raw template and store only the scrambled record.

        Args:
            actor_id: Unsigned 32-bit actor id
            role: Supply-chain role
            template: Raw template; discarded after scrambling
            key: Actor's scrambling key

        Returns:
            The stored ActorRecord

        Raises:
            DuplicateActorError: actor_id is already enrolled
            TemplateRangeError: the template holds -32768
        """
        actor_id = check_u32('actor_id', actor_id)
        if actor_id in self._records:
            raise DuplicateActorError(f"Actor {actor_id} is already enrolled")
        if INT16_MIN in template.values:
            raise TemplateRangeError("Template component -32768 cannot be enrolled")
        record = ActorRecord(actor_id=actor_id, role=ActorRole.parse(role), enrolled=scramble(template, key))
        self._records[actor_id] = record
        logger.info(f"✅ Enrolled actor {actor_id} as {record.role.name} under key {key.key_id}")
        return record

    def add_record(self, record: ActorRecord) -> None:
        """Adopt an already-scrambled record (registry files)."""
        if record.actor_id in self._records:
            raise DuplicateActorError(f"Actor {record.actor_id} is already enrolled")
        self._records[record.actor_id] = record

    def get(self, actor_id: int) -> ActorRecord:
        try:
            return self._records[actor_id]
        except KeyError:
            raise UnknownActorError(f"Actor {actor_id} is not enrolled")

    def __contains__(self, actor_id: object) -> bool:
        return actor_id in self._records

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[ActorRecord]:
        return iter(self._records[a] for a in sorted(self._records))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ActorRegistry):
            return NotImplemented
        return self._records == other._records

    def to_dict(self) -> Dict[str, Any]:
        return {'actors': [record.to_dict() for record in self]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ActorRegistry":
        registry = cls()
        for item in data.get('actors', []):
            registry.add_record(ActorRecord.from_dict(item))
        return registry


class BiometricVerifier:
    """In-process stand-in for the cloud biometric verification service."""

    def __init__(self, registry: ActorRegistry, threshold: int):
        self.registry = registry
        self.threshold = int(threshold)

    def verify(self, actor_id: int, probe: EncryptedTemplate) -> MatchDecision:
        record = self.registry.get(actor_id)
        decision = verify(probe, record, self.threshold)
        if not decision.accepted:
            logger.warning(f"❌ Probe for actor {actor_id} rejected (score {decision.score} > {self.threshold})")
        return decision

    def reverify(self, attestation) -> MatchDecision:
        """Recompute an on-ledger attestation's decision from the registry."""
        return self.verify(attestation.actor_id, attestation.encrypted_probe)
