"""Deterministic-capable crypto primitives shared by every other module.

Three things live here: the 160-bit digest used for PCRs and measurement
logs, a signature scheme hidden behind a scheme id, and a seedable random
stream. Everything is reproducible from a 64-bit seed so whole protocol
runs can be replayed bit-for-bit.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

DIGEST_LEN = 20
ZERO_DIGEST = b"\x00" * DIGEST_LEN

DEFAULT_SCHEME = "ed25519"
CERT_HASH_ALG = "sha256"


def hash160(data: bytes) -> bytes:
    """SHA-1 digest (the fixed PCR/log hash), always 20 bytes."""
    return hashlib.sha1(data).digest()


def hash256(data: bytes) -> bytes:
    """General-purpose digest for certificates and fingerprints."""
    return hashlib.sha256(data).digest()


def canonical_bytes(obj) -> bytes:
    """Stable byte encoding of a JSON-able structure, used for signing."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


class Rng:
    """Deterministic byte stream from a 64-bit unsigned seed.

    SHA-256 in counter mode; identical seeds produce identical streams on
    every platform. fork() derives an independent child stream so one
    consumer's draws never shift another's.
    """

    def __init__(self, seed: int, path: str = ""):
        if not 0 <= seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = seed
        self._key = hash256(seed.to_bytes(8, "big") + path.encode("utf-8"))
        self._counter = 0
        self._buffer = b""

    def bytes(self, n: int) -> bytes:
        while len(self._buffer) < n:
            block = hash256(self._key + self._counter.to_bytes(8, "big"))
            self._counter += 1
            self._buffer += block
        out, self._buffer = self._buffer[:n], self._buffer[n:]
        return out

    def u64(self) -> int:
        return int.from_bytes(self.bytes(8), "big")

    def randrange(self, n: int) -> int:
        """Uniform integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError("randrange needs n >= 1")
        limit = (2**64 // n) * n
        while True:
            v = self.u64()
            if v < limit:
                return v % n

    def choice(self, seq):
        return seq[self.randrange(len(seq))]

    def shuffled(self, seq) -> list:
        items = list(seq)
        for i in range(len(items) - 1, 0, -1):
            j = self.randrange(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def fork(self, label: str) -> "Rng":
        child = Rng.__new__(Rng)
        child.seed = self.seed
        child._key = hash256(self._key + b"fork:" + label.encode("utf-8"))
        child._counter = 0
        child._buffer = b""
        return child


@dataclass(frozen=True)
class KeyPair:
    public: bytes
    private: bytes
    scheme_id: str = DEFAULT_SCHEME


@lru_cache(maxsize=4096)
def _ed25519_private(private: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(private)


@lru_cache(maxsize=4096)
def _ed25519_public(public: bytes) -> Ed25519PublicKey:
    return Ed25519PublicKey.from_public_bytes(public)


def keygen(rng: Rng, scheme: str = DEFAULT_SCHEME) -> KeyPair:
    """Fresh key pair drawn from the rng stream."""
    if scheme == "ed25519":
        private = rng.bytes(32)
        public = _ed25519_private(private).public_key().public_bytes_raw()
        return KeyPair(public=public, private=private, scheme_id=scheme)
    if scheme == "toy":
        # Test double only: publicly forgeable, see sign()/verify().
        secret = rng.bytes(16)
        return KeyPair(public=secret, private=secret, scheme_id=scheme)
    raise ValueError(f"unknown signature scheme: {scheme}")


def public_from_private(private: bytes, scheme: str = DEFAULT_SCHEME) -> bytes:
    if scheme == "ed25519":
        return _ed25519_private(private).public_key().public_bytes_raw()
    if scheme == "toy":
        return private
    raise ValueError(f"unknown signature scheme: {scheme}")


def sign(key: KeyPair, message: bytes) -> bytes:
    if key.scheme_id == "ed25519":
        return _ed25519_private(key.private).sign(message)
    if key.scheme_id == "toy":
        return hash256(key.private + message)
    raise ValueError(f"unknown signature scheme: {key.scheme_id}")


def verify(public: bytes, message: bytes, signature: bytes, scheme: str = DEFAULT_SCHEME) -> bool:
    """True iff signature was produced over exactly this message by the
    matching private key. Malformed input never raises."""
    if scheme == "ed25519":
        if not isinstance(signature, (bytes, bytearray)) or len(public) != 32:
            return False
        try:
            _ed25519_public(bytes(public)).verify(bytes(signature), message)
            return True
        except (InvalidSignature, ValueError):
            return False
    if scheme == "toy":
        return signature == hash256(public + message)
    return False
