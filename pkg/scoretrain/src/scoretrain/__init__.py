"""Denoising score matching trainer for channel score networks, with a bridge
server exposing the trained first- and second-order scores over a byte-stream
protocol."""

__version__ = "0.1.0"
