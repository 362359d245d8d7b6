"""Binary frame layout shared by every backend.

    version u8 | session 16B | round u32 | step u16 | type u8 | len u32 | payload

All integers are little-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

from ..errors import DecodeError, PayloadTooLarge

VERSION = 1
HEADER = struct.Struct("<B16sIHBI")
HEADER_SIZE = HEADER.size  # 28
MAX_FRAME_SIZE = 16 * 1024 * 1024
MAX_PAYLOAD = MAX_FRAME_SIZE - HEADER_SIZE


class MsgType(IntEnum):
    RESHARE_R = 0x01
    MUL_FORWARD = 0x02
    OPEN_SHARE = 0x03
    BEAVER_TRIPLE = 0x04
    BEAVER_OPEN = 0x05
    TRIPLE_REQUEST = 0x06
    CONTRIB = 0x10


_KNOWN_TYPES = frozenset(int(t) for t in MsgType)


@dataclass(frozen=True)
class Frame:
    session_id: bytes
    round: int
    step: int
    msg_type: int
    payload: bytes = b""
    version: int = VERSION

    def __repr__(self):
        try:
            kind = MsgType(self.msg_type).name
        except ValueError:
            kind = hex(self.msg_type)
        return (f"Frame({kind}, session={self.session_id.hex()[:8]}, "
                f"round={self.round}, step={self.step}, {len(self.payload)}B)")


def encode_frame(f: Frame) -> bytes:
    if len(f.payload) > MAX_PAYLOAD:
        raise PayloadTooLarge(f"payload of {len(f.payload)} bytes exceeds {MAX_PAYLOAD}")
    if len(f.session_id) != 16:
        raise ValueError("session id must be 16 bytes")
    return HEADER.pack(f.version, f.session_id, f.round, f.step, f.msg_type, len(f.payload)) + f.payload


def decode_header(data: bytes) -> tuple:
    """Validate a 28-byte header; returns ``(Frame without payload, payload_len)``."""
    if len(data) < HEADER_SIZE:
        raise DecodeError(f"truncated header: {len(data)} < {HEADER_SIZE} bytes")
    version, session, rnd, step, msg_type, length = HEADER.unpack_from(data)
    if version != VERSION:
        raise DecodeError(f"unsupported frame version {version}")
    if msg_type not in _KNOWN_TYPES:
        raise DecodeError(f"unknown message type 0x{msg_type:02x}")
    if length > MAX_PAYLOAD:
        raise DecodeError(f"declared payload of {length} bytes exceeds cap")
    return Frame(session, rnd, step, msg_type, b""), length


def decode_frame(data: bytes) -> Frame:
    head, length = decode_header(data)
    if len(data) != HEADER_SIZE + length:
        raise DecodeError(f"frame declares {length} payload bytes, has {len(data) - HEADER_SIZE}")
    return Frame(head.session_id, head.round, head.step, head.msg_type, bytes(data[HEADER_SIZE:]))
