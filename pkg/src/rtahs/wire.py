"""Binary frame codec for the lockstep co-simulation protocol.

Little-endian layout, one frame per UDP datagram:

====== ======= =========================================================
offset size    field
====== ======= =========================================================
0      4       magic ``RTAH``
4      1       version (currently 1)
5      1       message type: 1 MEASUREMENT, 2 COMMAND, 3 HANDSHAKE,
               4 SHUTDOWN
6      1       dof_count (1..3)
7      1       flags: bit0 forces block present, bit1 displacements
               block present
8      4       sequence number (uint32)
12     8       simulation time, seconds (binary64)
20     ...     payload
====== ======= =========================================================

MEASUREMENT/COMMAND payload: forces block (dof_count binary64) if flags
bit0, then displacements block (dof_count binary64) if flags bit1, so
the total datagram length is ``20 + 8 * dof_count * popcount(flags)``.
HANDSHAKE payload (flags = 0): dt (binary64), t_end (binary64), dof mask
(1 byte), estimator id (1 byte).  SHUTDOWN carries no payload.
Anything else is rejected with a distinct, reportable error.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

MAGIC = b"RTAH"
VERSION = 1
HEADER_LEN = 20
HEADER_STRUCT = struct.Struct("<4sBBBBId")
HANDSHAKE_STRUCT = struct.Struct("<ddBB")

FLAG_FORCES = 0x01
FLAG_DISPLACEMENTS = 0x02

# Estimator identifiers carried in the handshake.
ESTIMATOR_IDS = {"kf": 1, "ekf": 2, "aekf": 3}
ESTIMATOR_NAMES = {v: k for k, v in ESTIMATOR_IDS.items()}


class MsgType(IntEnum):
    MEASUREMENT = 1
    COMMAND = 2
    HANDSHAKE = 3
    SHUTDOWN = 4


class FrameError(Exception):
    """Base class for frame encoding/decoding failures."""


class FrameEncodeError(FrameError):
    """Frame violates an invariant and cannot be encoded."""


class FrameDecodeError(FrameError):
    """Base class for the distinct decode rejection kinds."""


class TruncatedFrameError(FrameDecodeError):
    """Datagram shorter than the fixed header."""


class BadMagicError(FrameDecodeError):
    """Leading magic bytes are not ``RTAH``."""


class BadVersionError(FrameDecodeError):
    """Unsupported protocol version."""


class BadLengthError(FrameDecodeError):
    """Datagram length inconsistent with header fields."""


class BadFieldError(FrameDecodeError):
    """Header field outside its legal range."""


@dataclass(frozen=True)
class Handshake:
    dt: float
    t_end: float
    dof_mask: int
    estimator_id: int


@dataclass(frozen=True)
class Frame:
    """One protocol message.

    ``forces``/``displacements`` are per-DOF tuples present according to
    the message role; ``handshake`` is populated only for HANDSHAKE
    frames.
    """

    msg_type: MsgType
    dof_count: int
    seq: int
    sim_time: float
    forces: Optional[tuple[float, ...]] = None
    displacements: Optional[tuple[float, ...]] = None
    handshake: Optional[Handshake] = None

    @property
    def flags(self) -> int:
        f = 0
        if self.forces is not None:
            f |= FLAG_FORCES
        if self.displacements is not None:
            f |= FLAG_DISPLACEMENTS
        return f


def _validate_for_encode(f: Frame) -> None:
    if not isinstance(f.msg_type, MsgType):
        raise FrameEncodeError(f"unknown message type {f.msg_type!r}")
    if not 1 <= f.dof_count <= 3:
        raise FrameEncodeError(f"dof_count must be 1..3, got {f.dof_count}")
    if not 0 <= f.seq < 2**32:
        raise FrameEncodeError(f"seq out of uint32 range: {f.seq}")
    for name, block in (("forces", f.forces), ("displacements", f.displacements)):
        if block is not None and len(block) != f.dof_count:
            raise FrameEncodeError(
                f"{name} block length {len(block)} != dof_count {f.dof_count}"
            )
    if f.msg_type in (MsgType.HANDSHAKE, MsgType.SHUTDOWN):
        if f.forces is not None or f.displacements is not None:
            raise FrameEncodeError(f"{f.msg_type.name} carries no data blocks")
    if f.msg_type == MsgType.HANDSHAKE:
        if f.handshake is None:
            raise FrameEncodeError("HANDSHAKE requires a handshake payload")
        if not 1 <= f.handshake.dof_mask <= 7:
            raise FrameEncodeError(f"bad dof mask {f.handshake.dof_mask}")
        if f.handshake.estimator_id not in ESTIMATOR_NAMES:
            raise FrameEncodeError(f"bad estimator id {f.handshake.estimator_id}")
    elif f.handshake is not None:
        raise FrameEncodeError("handshake payload only valid on HANDSHAKE frames")


def encode_frame(f: Frame) -> bytes:
    """Serialize a frame; raises :class:`FrameEncodeError` if any
    invariant is violated."""
    _validate_for_encode(f)
    head = HEADER_STRUCT.pack(
        MAGIC, VERSION, int(f.msg_type), f.dof_count, f.flags, f.seq, f.sim_time
    )
    if f.msg_type == MsgType.HANDSHAKE:
        hs = f.handshake
        return head + HANDSHAKE_STRUCT.pack(hs.dt, hs.t_end, hs.dof_mask, hs.estimator_id)
    payload = b""
    if f.forces is not None:
        payload += struct.pack(f"<{f.dof_count}d", *f.forces)
    if f.displacements is not None:
        payload += struct.pack(f"<{f.dof_count}d", *f.displacements)
    return head + payload


def decode_frame(data: bytes) -> Frame:
    """Parse one datagram into a frame, rejecting malformed input with a
    distinct error per failure kind; never reads past the datagram."""
    if len(data) < HEADER_LEN:
        raise TruncatedFrameError(
            f"datagram of {len(data)} bytes is shorter than the {HEADER_LEN}-byte header"
        )
    magic, version, msg_type, dof_count, flags, seq, sim_time = HEADER_STRUCT.unpack(
        data[:HEADER_LEN]
    )
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise BadVersionError(f"unsupported version {version}")
    try:
        mtype = MsgType(msg_type)
    except ValueError:
        raise BadFieldError(f"unknown message type {msg_type}") from None
    if not 1 <= dof_count <= 3:
        raise BadFieldError(f"dof_count must be 1..3, got {dof_count}")
    if flags & ~(FLAG_FORCES | FLAG_DISPLACEMENTS):
        raise BadFieldError(f"unknown flag bits 0x{flags:02x}")

    if mtype == MsgType.HANDSHAKE:
        if flags != 0:
            raise BadFieldError("HANDSHAKE must carry flags = 0")
        expected = HEADER_LEN + HANDSHAKE_STRUCT.size
        if len(data) != expected:
            raise BadLengthError(
                f"HANDSHAKE length {len(data)} != expected {expected}"
            )
        dt, t_end, dof_mask, estimator_id = HANDSHAKE_STRUCT.unpack(data[HEADER_LEN:])
        if not 1 <= dof_mask <= 7:
            raise BadFieldError(f"bad dof mask {dof_mask}")
        if estimator_id not in ESTIMATOR_NAMES:
            raise BadFieldError(f"bad estimator id {estimator_id}")
        return Frame(
            msg_type=mtype,
            dof_count=dof_count,
            seq=seq,
            sim_time=sim_time,
            handshake=Handshake(dt=dt, t_end=t_end, dof_mask=dof_mask, estimator_id=estimator_id),
        )

    if mtype == MsgType.SHUTDOWN:
        if flags != 0:
            raise BadFieldError("SHUTDOWN must carry flags = 0")
        if len(data) != HEADER_LEN:
            raise BadLengthError(f"SHUTDOWN length {len(data)} != {HEADER_LEN}")
        return Frame(msg_type=mtype, dof_count=dof_count, seq=seq, sim_time=sim_time)

    n_blocks = bin(flags).count("1")
    expected = HEADER_LEN + 8 * dof_count * n_blocks
    if len(data) != expected:
        raise BadLengthError(
            f"{mtype.name} length {len(data)} != expected {expected} "
            f"for dof_count={dof_count}, flags=0x{flags:02x}"
        )
    offset = HEADER_LEN
    forces = displacements = None
    if flags & FLAG_FORCES:
        forces = struct.unpack_from(f"<{dof_count}d", data, offset)
        offset += 8 * dof_count
    if flags & FLAG_DISPLACEMENTS:
        displacements = struct.unpack_from(f"<{dof_count}d", data, offset)
    return Frame(
        msg_type=mtype,
        dof_count=dof_count,
        seq=seq,
        sim_time=sim_time,
        forces=forces,
        displacements=displacements,
    )
