"""Message-passing engine and simulation harness for joint activity detection
and channel estimation in MIMO-OFDM grant-free random access."""

__version__ = "0.1.0"
