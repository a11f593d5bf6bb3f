"""Deterministic trusted-computing protocol simulator.

Software trust anchor (PCRs, AIKs, shielded storage), measured boot,
remote attestation with a privacy CA issuing one-time credentials, and
scripted multi-party mobile scenarios whose transcripts carry
machine-checkable privacy and integrity assertions.
"""

__version__ = "0.1.0"
