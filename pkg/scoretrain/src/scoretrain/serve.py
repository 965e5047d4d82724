"""Bridge server: answers score requests from a checkpoint over stdio or TCP.

One request at a time per connection, responses in request order. Malformed
frames (bad magic, truncated payload, absurd sizes) close the connection;
recoverable problems answer with a status code: 1 for a noise level outside
the trained domain, 2 for shape or capability errors. Analytic "gaussian"
checkpoints are evaluated in float64 numpy, so responses are bit-identical to
an in-process evaluation of the same formulas.
"""

import socket
import sys

import numpy as np

from .protocol import (MAGIC, MAX_ENTRIES, OP_BOTH, OP_SCORE1, OP_SCORE2,
                       REQUEST_HEADER, STATUS_BAD_TAU, STATUS_OK, STATUS_SHAPE,
                       VERSION, pack_response, read_exact)
from .train import load_checkpoint


class CheckpointEvaluator:
    """Uniform score1/score2 evaluation over the supported checkpoint kinds."""

    def __init__(self, ckpt):
        self.kind = ckpt["kind"]
        self.has_second = bool(ckpt.get("has_second", True))
        if self.kind == "gaussian":
            self.sigma2 = float(ckpt["sigma2"])
            self.domain = (0.0, np.inf)
        elif self.kind == "linear":
            self.taus = np.asarray(ckpt["taus"], dtype=float)
            self.c1 = ckpt["model1"]["c"].numpy().astype(float)
            self.c2 = ckpt["model2"]["d"].numpy().astype(float)
            self.domain = (float(self.taus[0]), float(self.taus[-1]))
        elif self.kind == "conv":
            import torch

            from .models import make_models
            self.torch = torch
            self.taus = np.asarray(ckpt["taus"], dtype=float)
            self.model1, self.model2 = make_models("conv", len(self.taus))
            self.model1.load_state_dict(ckpt["model1"])
            self.model2.load_state_dict(ckpt["model2"])
            self.model1.eval()
            self.model2.eval()
            self.domain = (float(self.taus[0]), float(self.taus[-1]))
        else:
            raise ValueError(f"unknown checkpoint kind {self.kind!r}")

    def in_domain(self, tau: float) -> bool:
        return np.isfinite(tau) and self.domain[0] <= tau <= self.domain[1] and tau > 0

    def score1(self, h: np.ndarray, tau: float) -> np.ndarray:
        if self.kind == "gaussian":
            return -(h / (self.sigma2 + tau))
        if self.kind == "linear":
            c = np.interp(tau, self.taus, self.c1)
            return c * h
        return self._conv(self.model1, h, tau)

    def score2(self, h: np.ndarray, tau: float) -> np.ndarray:
        if self.kind == "gaussian":
            return np.full(h.shape, -1.0 / (self.sigma2 + tau))
        if self.kind == "linear":
            d = np.interp(tau, self.taus, self.c2)
            return np.full(h.shape, d)
        return self._conv(self.model2, h, tau).real.astype(float)

    def _conv(self, model, h, tau):
        torch = self.torch
        if h.shape[0] == 0:
            return np.zeros(h.shape, dtype=complex)
        with torch.no_grad():
            ht = torch.from_numpy(np.ascontiguousarray(h))
            taus = torch.full((h.shape[0],), float(tau), dtype=torch.float64)
            out = model(ht, taus, None)
        return out.numpy()


def handle_stream(rfile, wfile, ev: CheckpointEvaluator):
    """Serve one connection until it closes or sends a malformed frame."""
    while True:
        header = read_exact(rfile, REQUEST_HEADER.size)
        if header is None:
            return
        try:
            magic, version, op, _, b, n, m, tau = REQUEST_HEADER.unpack(header)
        except Exception:
            return
        if magic != MAGIC or version != VERSION:
            return
        entries = b * n * m
        if entries > MAX_ENTRIES:
            return
        payload = read_exact(rfile, 16 * entries)
        if payload is None:
            return
        if op not in (OP_SCORE1, OP_SCORE2, OP_BOTH):
            wfile.write(pack_response(op, STATUS_SHAPE))
            wfile.flush()
            continue
        if op in (OP_SCORE2, OP_BOTH) and not ev.has_second:
            wfile.write(pack_response(op, STATUS_SHAPE))
            wfile.flush()
            continue
        if not ev.in_domain(tau):
            wfile.write(pack_response(op, STATUS_BAD_TAU))
            wfile.flush()
            continue
        h = np.frombuffer(payload, dtype="<c16").reshape(b, n, m)
        try:
            s1 = ev.score1(h, tau) if op in (OP_SCORE1, OP_BOTH) else None
            s2 = ev.score2(h, tau) if op in (OP_SCORE2, OP_BOTH) else None
        except Exception:
            wfile.write(pack_response(op, STATUS_SHAPE))
            wfile.flush()
            continue
        wfile.write(pack_response(op, STATUS_OK, s1, s2))
        wfile.flush()


class BridgeServer:
    """Sequential TCP server; connections are handled one after another."""

    def __init__(self, evaluator: CheckpointEvaluator, host="127.0.0.1", port=0):
        self.evaluator = evaluator
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(8)
        self.host, self.port = self._sock.getsockname()[:2]
        self.addr = f"{self.host}:{self.port}"
        self._closing = False

    def serve_forever(self):
        while not self._closing:
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            rfile = conn.makefile("rb")
            wfile = conn.makefile("wb")
            try:
                handle_stream(rfile, wfile, self.evaluator)
            except Exception:
                pass  # a broken connection must never take the server down
            finally:
                # close the file objects too: the fd stays open (no EOF for
                # the peer) while they hold io references
                for fh in (rfile, wfile):
                    try:
                        fh.close()
                    except OSError:
                        pass
                conn.close()

    def close(self):
        self._closing = True
        try:
            self._sock.close()
        except OSError:
            pass


def serve_stdio(checkpoint_path):
    ev = CheckpointEvaluator(load_checkpoint(checkpoint_path))
    handle_stream(sys.stdin.buffer, sys.stdout.buffer, ev)


def serve_tcp(checkpoint_path, host: str, port: int):
    ev = CheckpointEvaluator(load_checkpoint(checkpoint_path))
    server = BridgeServer(ev, host=host, port=port)
    print(f"serving on {server.addr}", file=sys.stderr, flush=True)
    server.serve_forever()
