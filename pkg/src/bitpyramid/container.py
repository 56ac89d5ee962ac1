"""Bit-exact token-pyramid container.

Layout (all integers little-endian):

    magic   4s   "BVP1"
    version u16  format version (currently 1)
    kind    u8   quantizer kind (0 = LFQ, 1 = BSQ)
    d       u16  bit dimension
    sched   u16  schedule id
    K       u16  number of scales
    h, w    u16  target grid shape (must equal the schedule's final scale)
    flags   u8   bit 0: a flip-trace section follows the payload
    payload      per scale, row-major cells, each cell ceil(d/8) bytes,
                 bit p stored LSB-first within the cell
    trace?       per scale: flip ratio f64 + mask plane packed as above
    checksum u64 blake2b-64 of every preceding byte

Serialization is canonical: equal pyramids produce equal bytes.  Any
single-byte corruption is caught by a typed error, never silently decoded.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from .correction import FlipTrace
from .errors import (
    BadMagicError,
    ChecksumError,
    ContractError,
    TruncatedError,
    VersionMismatchError,
)
from .pyramid import TokenPyramid
from .quantizer import QuantizerConfig, QuantizerKind
from .schedule import schedule_by_id

MAGIC = b"BVP1"
VERSION = 1
_HEADER = struct.Struct("<4sHBHHHHHB")
_KIND_CODE = {QuantizerKind.LFQ: 0, QuantizerKind.BSQ: 1}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


def checksum64(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def _pack_plane(bits: np.ndarray) -> bytes:
    return np.packbits(np.ascontiguousarray(bits), axis=-1, bitorder="little").tobytes()


def _unpack_plane(raw: bytes, h: int, w: int, d: int) -> np.ndarray:
    bytes_per_cell = (d + 7) // 8
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, bytes_per_cell)
    return np.unpackbits(arr, axis=-1, count=d, bitorder="little")


def payload_size(schedule, d: int) -> int:
    bytes_per_cell = (d + 7) // 8
    return sum(h * w * bytes_per_cell for h, w in schedule.scales)


def serialize(pyramid: TokenPyramid) -> bytes:
    """Canonical bytes for a pyramid (including its flip trace if present)."""
    pyramid.validate_shapes()
    sched = pyramid.schedule
    h, w = sched.final_scale
    trace = pyramid.flip_trace
    flags = 1 if trace is not None else 0
    parts = [
        _HEADER.pack(
            MAGIC,
            VERSION,
            _KIND_CODE[pyramid.quantizer.kind],
            pyramid.quantizer.d,
            sched.schedule_id,
            sched.K,
            h,
            w,
            flags,
        )
    ]
    for bits in pyramid.residuals:
        parts.append(_pack_plane(bits))
    if trace is not None:
        for ratio, mask in zip(trace.ratios, trace.masks):
            parts.append(struct.pack("<d", ratio))
            parts.append(_pack_plane(mask))
    body = b"".join(parts)
    return body + struct.pack("<Q", checksum64(body))


def deserialize(data: bytes) -> TokenPyramid:
    """Parse container bytes back into a TokenPyramid.

    Check order: size floor, magic, version, checksum, then structure, so a
    corrupted byte anywhere raises a typed error before any bits are trusted.
    """
    if len(data) < _HEADER.size + 8:
        raise TruncatedError(f"container too short: {len(data)} bytes")
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}")
    magic, version, kind_code, d, sched_id, K, h, w, flags = _HEADER.unpack(
        data[: _HEADER.size]
    )
    if version != VERSION:
        raise VersionMismatchError(f"format version {version}, expected {VERSION}")
    body, stored = data[:-8], struct.unpack("<Q", data[-8:])[0]
    if checksum64(body) != stored:
        raise ChecksumError("checksum mismatch")

    if kind_code not in _CODE_KIND:
        raise ContractError(f"unknown quantizer kind code {kind_code}")
    cfg = QuantizerConfig(kind=_CODE_KIND[kind_code], d=d)
    sched = schedule_by_id(sched_id)
    if sched.K != K or sched.final_scale != (h, w):
        raise ContractError(
            f"header (K={K}, target={(h, w)}) disagrees with schedule {sched_id}"
        )
    expected = _HEADER.size + payload_size(sched, d)
    if flags & 1:
        expected += sum(8 + hk * wk * ((d + 7) // 8) for hk, wk in sched.scales)
    if len(body) != expected:
        raise TruncatedError(f"container body is {len(body)} bytes, expected {expected}")

    off = _HEADER.size
    residuals = []
    bytes_per_cell = (d + 7) // 8
    for hk, wk in sched.scales:
        n = hk * wk * bytes_per_cell
        residuals.append(_unpack_plane(body[off : off + n], hk, wk, d))
        off += n
    trace = None
    if flags & 1:
        ratios, masks = [], []
        for hk, wk in sched.scales:
            (ratio,) = struct.unpack("<d", body[off : off + 8])
            off += 8
            n = hk * wk * bytes_per_cell
            masks.append(_unpack_plane(body[off : off + n], hk, wk, d))
            off += n
            ratios.append(ratio)
        trace = FlipTrace(ratios=ratios, masks=masks)
    return TokenPyramid(residuals, cfg, sched, flip_trace=trace)
