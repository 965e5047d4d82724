"""Wire framing for the score bridge protocol (server side).

Little-endian frames over any byte stream. Request: magic "STMP", u8
version=1, u8 op (1=score1, 2=score2diag, 3=both), u16 reserved, u32 B, u32 N,
u32 M, f64 tau, then B*N*M (f64 re, f64 im) entries in C order. Response:
magic, version, op echo, u8 status (0 ok, 1 bad tau, 2 shape/capability
error); ok responses carry score1 as (re, im) pairs for op 1/3 and the real
second-order diagonal for op 2/3.
"""

import struct

import numpy as np

MAGIC = b"STMP"
VERSION = 1
OP_SCORE1 = 1
OP_SCORE2 = 2
OP_BOTH = 3
STATUS_OK = 0
STATUS_BAD_TAU = 1
STATUS_SHAPE = 2

REQUEST_HEADER = struct.Struct("<4sBBHIIId")
RESPONSE_HEADER = struct.Struct("<4sBBB")

# refuse to allocate payloads beyond this many complex entries per frame
MAX_ENTRIES = 1 << 24


def pack_response(op: int, status: int, score1=None, score2=None) -> bytes:
    out = RESPONSE_HEADER.pack(MAGIC, VERSION, op, status)
    if status != STATUS_OK:
        return out
    if op in (OP_SCORE1, OP_BOTH):
        out += np.ascontiguousarray(score1, dtype="<c16").tobytes()
    if op in (OP_SCORE2, OP_BOTH):
        out += np.ascontiguousarray(score2, dtype="<f8").tobytes()
    return out


def read_exact(rfile, count: int):
    """Read exactly count bytes, or None on a short/closed stream."""
    chunks = []
    remaining = count
    while remaining > 0:
        chunk = rfile.read(remaining)
        if not chunk:
            return None
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)
