"""
Big-endian fixed-width wire primitives for canonical encoding.

Strings are a u32 byte length followed by UTF-8; lists are a u32 count
followed by the elements. Decoding is strict and raises ChainFormatError;
running out of data raises its TruncatedChainError subclass.
"""

import struct
from typing import Callable, List, TypeVar

from utils.errors import ChainFormatError, TruncatedChainError

T = TypeVar('T')

_U8 = struct.Struct('>B')
_I16 = struct.Struct('>h')
_U32 = struct.Struct('>I')
_I32 = struct.Struct('>i')
_U64 = struct.Struct('>Q')


class Encoder:
    def __init__(self):
        self._parts: List[bytes] = []

    def u8(self, value: int) -> "Encoder":
        self._parts.append(_U8.pack(value))
        return self

    def boolean(self, value: bool) -> "Encoder":
        return self.u8(1 if value else 0)

    def u32(self, value: int) -> "Encoder":
        self._parts.append(_U32.pack(value))
        return self

    def i32(self, value: int) -> "Encoder":
        self._parts.append(_I32.pack(value))
        return self

    def u64(self, value: int) -> "Encoder":
        self._parts.append(_U64.pack(value))
        return self

    def i16_vector(self, values) -> "Encoder":
        self._parts.append(struct.pack(f'>{len(values)}h', *values))
        return self

    def raw(self, data: bytes) -> "Encoder":
        self._parts.append(bytes(data))
        return self

    def string(self, value: str) -> "Encoder":
        data = value.encode('utf-8')
        return self.u32(len(data)).raw(data)

    def strings(self, values) -> "Encoder":
        self.u32(len(values))
        for value in values:
            self.string(value)
        return self

    def to_bytes(self) -> bytes:
        return b''.join(self._parts)


class Decoder:
    def __init__(self, data: bytes, offset: int = 0):
        self.data = bytes(data)
        self.offset = offset

    def _take(self, size: int) -> bytes:
        end = self.offset + size
        if size < 0 or end > len(self.data):
            raise TruncatedChainError(f"Truncated data: need {size} bytes at offset {self.offset}")
        chunk = self.data[self.offset:end]
        self.offset = end
        return chunk

    def u8(self) -> int:
        return _U8.unpack(self._take(1))[0]

    def boolean(self) -> bool:
        value = self.u8()
        if value not in (0, 1):
            raise ChainFormatError(f"Invalid boolean byte {value}")
        return value == 1

    def u32(self) -> int:
        return _U32.unpack(self._take(4))[0]

    def i32(self) -> int:
        return _I32.unpack(self._take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self._take(8))[0]

    def i16_vector(self, count: int) -> tuple:
        return struct.unpack(f'>{count}h', self._take(2 * count))

    def raw(self, size: int) -> bytes:
        return self._take(size)

    def string(self) -> str:
        data = self._take(self.u32())
        try:
            return data.decode('utf-8')
        except UnicodeDecodeError as e:
            raise ChainFormatError(f"Invalid UTF-8 string: {e}")

    def strings(self) -> tuple:
        return self.sequence(self.string)

    def sequence(self, read_item: Callable[[], T]) -> tuple:
        count = self.u32()
        # each element occupies at least 4 bytes in every list we encode
        if count * 4 > self.remaining:
            raise TruncatedChainError(f"List count {count} exceeds remaining data")
        return tuple(read_item() for _ in range(count))

    @property
    def remaining(self) -> int:
        return len(self.data) - self.offset
