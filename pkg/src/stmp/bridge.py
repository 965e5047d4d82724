"""Client side of the score bridge wire protocol.

Frames are little-endian over any byte stream (TCP socket or a subprocess
stdio pipe):

  request:  magic "STMP", u8 version=1, u8 op (1=score1, 2=score2diag,
            3=both), u16 reserved=0, u32 B, u32 N, u32 M, f64 tau, then
            B*N*M complex entries as (f64 re, f64 im), k-major then n then m.
  response: magic, version, op echo, u8 status (0=ok, 1=bad tau, 2=shape
            error), then for op in {1,3} B*N*M (re, im) score1 entries, and
            for op in {2,3} B*N*M f64 real second-order diagonal entries.

Any non-zero status aborts the calling trial with BridgeError. One client
serializes requests on its connection; pool clients for concurrency.
"""

import socket
import struct
import subprocess

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

_STATUS_TEXT = {1: "bad tau", 2: "shape error"}


class BridgeError(RuntimeError):
    pass


def encode_request(op: int, h: np.ndarray, tau: float) -> bytes:
    h = np.asarray(h, dtype=complex)
    if h.ndim != 3:
        raise ValueError("batch must have shape (B, N, M)")
    b, n, m = h.shape
    header = REQUEST_HEADER.pack(MAGIC, VERSION, op, 0, b, n, m, float(tau))
    return header + np.ascontiguousarray(h, dtype="<c16").tobytes()


def encode_response(op: int, status: int, score1=None, score2=None) -> bytes:
    out = RESPONSE_HEADER.pack(MAGIC, VERSION, op, status)
    if status != STATUS_OK:
        return out
    if op in (OP_SCORE1, OP_BOTH):
        out += np.ascontiguousarray(score1, dtype="<c16").tobytes()
    if op in (OP_SCORE2, OP_BOTH):
        out += np.ascontiguousarray(score2, dtype="<f8").tobytes()
    return out


def _read_exact(rfile, count: int) -> bytes:
    chunks = []
    remaining = count
    while remaining > 0:
        chunk = rfile.read(remaining)
        if not chunk:
            raise BridgeError(f"bridge stream closed ({count - remaining}/{count} bytes)")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


class BridgeClient:
    """Speaks the bridge protocol over a pair of binary streams."""

    def __init__(self, rfile, wfile, closer=None):
        self._rfile = rfile
        self._wfile = wfile
        self._closer = closer

    @classmethod
    def connect_tcp(cls, addr: str, timeout: float = 10.0):
        host, _, port = addr.rpartition(":")
        sock = socket.create_connection((host or "127.0.0.1", int(port)), timeout=timeout)
        rfile = sock.makefile("rb")
        wfile = sock.makefile("wb")
        return cls(rfile, wfile, closer=sock.close)

    @classmethod
    def spawn(cls, argv):
        proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE)

        def closer():
            proc.stdin.close()
            proc.wait(timeout=10)

        return cls(proc.stdout, proc.stdin, closer=closer)

    def close(self):
        if self._closer is not None:
            self._closer()
            self._closer = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _roundtrip(self, op: int, h: np.ndarray, tau: float):
        h = np.asarray(h, dtype=complex)
        b, n, m = h.shape
        self._wfile.write(encode_request(op, h, tau))
        self._wfile.flush()
        raw = _read_exact(self._rfile, RESPONSE_HEADER.size)
        magic, version, op_echo, status = RESPONSE_HEADER.unpack(raw)
        if magic != MAGIC or version != VERSION:
            raise BridgeError(f"bad response header {raw!r}")
        if op_echo != op:
            raise BridgeError(f"op echo mismatch: sent {op}, got {op_echo}")
        if status != STATUS_OK:
            raise BridgeError(f"bridge status {status} ({_STATUS_TEXT.get(status, 'unknown')})")
        count = b * n * m
        score1 = score2 = None
        if op in (OP_SCORE1, OP_BOTH):
            score1 = np.frombuffer(_read_exact(self._rfile, 16 * count),
                                   dtype="<c16").reshape(b, n, m).astype(complex)
        if op in (OP_SCORE2, OP_BOTH):
            score2 = np.frombuffer(_read_exact(self._rfile, 8 * count),
                                   dtype="<f8").reshape(b, n, m).astype(float)
        return score1, score2

    def score1(self, h, tau):
        return self._roundtrip(OP_SCORE1, h, tau)[0]

    def score2_diag(self, h, tau):
        return self._roundtrip(OP_SCORE2, h, tau)[1]

    def score_both(self, h, tau):
        return self._roundtrip(OP_BOTH, h, tau)


class BridgeScoreModel:
    """Score-model adapter over a bridge connection (one op=3 call per batch)."""

    has_second_order = True
    tau_domain = (0.0, np.inf)   # the server enforces its trained domain

    def __init__(self, client: BridgeClient):
        self.client = client

    def score1(self, h, tau):
        return self.client.score1(h, tau)

    def score2_diag(self, h, tau):
        return self.client.score2_diag(h, tau)

    def score_both(self, h, tau):
        return self.client.score_both(h, tau)
