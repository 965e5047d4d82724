"""Minimal TCP bridge-protocol server used by client and CLI tests."""

import socket
import threading

import numpy as np

from stmp.bridge import (OP_BOTH, OP_SCORE1, OP_SCORE2, REQUEST_HEADER,
                         RESPONSE_HEADER, MAGIC, STATUS_BAD_TAU, STATUS_OK,
                         VERSION, encode_response)
from stmp.denoisers import GaussianScore


class StubServer:
    """Serves the wire protocol with a Gaussian score, or canned failure modes."""

    def __init__(self, mode="gaussian", sigma2=1.0):
        self.mode = mode
        self.score = GaussianScore(sigma2)
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind(("127.0.0.1", 0))
        self._sock.listen(4)
        self.addr = "127.0.0.1:%d" % self._sock.getsockname()[1]
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._thread.start()

    def close(self):
        self._stop.set()
        try:
            self._sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _serve(self):
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            try:
                self._handle(conn)
            except Exception:
                pass
            finally:
                conn.close()

    def _handle(self, conn):
        rfile = conn.makefile("rb")
        wfile = conn.makefile("wb")
        while True:
            header = rfile.read(REQUEST_HEADER.size)
            if len(header) < REQUEST_HEADER.size:
                return
            magic, version, op, _, b, n, m, tau = REQUEST_HEADER.unpack(header)
            if magic != MAGIC or version != VERSION:
                return
            payload = rfile.read(16 * b * n * m)
            if len(payload) < 16 * b * n * m:
                return
            if self.mode == "status1":
                wfile.write(RESPONSE_HEADER.pack(MAGIC, VERSION, op, STATUS_BAD_TAU))
                wfile.flush()
                continue
            if self.mode == "truncate":
                wfile.write(RESPONSE_HEADER.pack(MAGIC, VERSION, op, STATUS_OK)[:3])
                wfile.flush()
                return
            if self.mode == "wrong_op":
                wfile.write(RESPONSE_HEADER.pack(MAGIC, VERSION, op ^ 0x7, STATUS_OK))
                wfile.flush()
                return
            h = np.frombuffer(payload, dtype="<c16").reshape(b, n, m)
            s1 = self.score.score1(h, tau) if op in (OP_SCORE1, OP_BOTH) else None
            s2 = self.score.score2_diag(h, tau) if op in (OP_SCORE2, OP_BOTH) else None
            wfile.write(encode_response(op, STATUS_OK, s1, s2))
            wfile.flush()
