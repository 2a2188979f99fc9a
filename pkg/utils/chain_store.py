"""
On-disk formats: the "BBC1" binary chain file, its lossless JSON view, and
the JSON files for templates, keys and actor registries.
"""

import json
import logging
import os
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Tuple, TypeVar

from utils.biometrics import ActorRegistry, BiometricTemplate, ScramblingKey
from utils.codec import Decoder, Encoder
from utils.constants import CHAIN_MAGIC
from utils.errors import BBCError, ChainFormatError
from utils.ledger import Chain, decode_block, encode_block

logger = logging.getLogger(__name__)

T = TypeVar('T')


@dataclass(frozen=True)
class BlockSpan:
    """Byte range [start, end) of one block inside a chain file."""

    index: int
    start: int
    end: int

    def __len__(self) -> int:
        return self.end - self.start


def encode_chain(chain: Chain) -> bytes:
    enc = Encoder().raw(CHAIN_MAGIC).u32(len(chain.blocks))
    for block in chain.blocks:
        enc.raw(encode_block(block))
    return enc.to_bytes()


def decode_chain_with_spans(data: bytes) -> Tuple[Chain, List[BlockSpan]]:
    """
    Decode a chain file.

    Raises:
        ChainFormatError: bad magic or header (block_index None), or an
            undecodable block (block_index set to that block's position)
        TruncatedChainError: the file ends inside a block (block_index set)
    """
    if data[:len(CHAIN_MAGIC)] != CHAIN_MAGIC:
        raise ChainFormatError("Not a BBC1 chain file (bad magic)")
    dec = Decoder(data, len(CHAIN_MAGIC))
    count = dec.u32()

    blocks, spans = [], []
    for index in range(count):
        start = dec.offset
        try:
            blocks.append(decode_block(dec))
        except ChainFormatError as e:
            raise type(e)(f"Block {index}: {e.message}", block_index=index)
        spans.append(BlockSpan(index, start, dec.offset))
    if dec.remaining:
        raise ChainFormatError(f"{dec.remaining} trailing bytes after the last block",
                               block_index=count - 1 if count else None)
    return Chain(tuple(blocks)), spans


def decode_chain(data: bytes) -> Chain:
    return decode_chain_with_spans(data)[0]


def block_spans(data: bytes) -> List[BlockSpan]:
    return decode_chain_with_spans(data)[1]


def read_chain(path: str) -> Chain:
    with open(path, 'rb') as f:
        return decode_chain(f.read())


def write_chain(path: str, chain: Chain) -> None:
    with open(path, 'wb') as f:
        f.write(encode_chain(chain))
    logger.info(f"✅ Wrote {len(chain.blocks)} blocks to {path}")


def tamper_bytes(data: bytes, block: int, offset: int, xor: int = 0xFF) -> bytes:
    """XOR one byte at `offset` within block `block` of an encoded chain."""
    spans = block_spans(data)
    if not 0 <= block < len(spans):
        raise ChainFormatError(f"Block {block} out of range (chain has {len(spans)} blocks)")
    span = spans[block]
    if not 0 <= offset < len(span):
        raise ChainFormatError(f"Offset {offset} outside block {block} ({len(span)} bytes)")
    if not 1 <= xor <= 0xFF:
        raise ChainFormatError("xor mask must be in 1..255")
    mutated = bytearray(data)
    mutated[span.start + offset] ^= xor
    return bytes(mutated)


# JSON views

def export_chain(chain: Chain) -> Dict[str, Any]:
    blocks = []
    for block in chain.blocks:
        data = block.to_dict()
        data['hash'] = block.hash.hex()
        blocks.append(data)
    return {'format': CHAIN_MAGIC.decode('ascii'), 'blocks': blocks}


def import_chain(data: Dict[str, Any]) -> Chain:
    return _parse(lambda: Chain.from_dict(data), "chain JSON")


def dumps(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False)


def _parse(build: Callable[[], T], what: str) -> T:
    try:
        return build()
    except BBCError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ChainFormatError(f"Malformed {what}: {e}")


def read_json(path: str) -> Any:
    with open(path, 'r', encoding='utf-8') as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise ChainFormatError(f"{path} is not valid JSON: {e}")


def write_json(path: str, data: Any) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(dumps(data) + '\n')


def load_template(path: str) -> BiometricTemplate:
    return _parse(lambda: BiometricTemplate.from_dict(read_json(path)), f"template file {path}")


def save_template(path: str, template: BiometricTemplate) -> None:
    write_json(path, template.to_dict())


def load_key(path: str) -> ScramblingKey:
    return _parse(lambda: ScramblingKey.from_dict(read_json(path)), f"key file {path}")


def save_key(path: str, key: ScramblingKey) -> None:
    write_json(path, key.to_dict())
    logger.info(f"✅ Key {key.key_id} written to {path}")


def load_registry(path: str) -> ActorRegistry:
    return _parse(lambda: ActorRegistry.from_dict(read_json(path)), f"registry file {path}")


def save_registry(path: str, registry: ActorRegistry) -> None:
    write_json(path, registry.to_dict())
