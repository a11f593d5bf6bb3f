"""Software trust anchor: PCR bank, endorsement key, AIKs, shielded storage.

One anchor per simulated device, single-owner. PCRs only ever change via
extend; AIK private keys never leave the anchor and each AIK signs at most
one quote (or one batch-replenishment request) unless the one-time policy
is explicitly disabled for a misbehaving-device test.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import crypto
from .crypto import DIGEST_LEN, ZERO_DIGEST, KeyPair, Rng
from .errors import ProtocolError

PCR_COUNT = 24

# Domain separation for the three things anchor keys sign.
_EK_TAG = b"ek-liveness:"
_QUOTE_TAG = b"quote:"
_REPLENISH_TAG = b"replenish:"


class PcrBank:
    """24 registers of 20 bytes each; mutation only via extend."""

    def __init__(self):
        self._registers = [ZERO_DIGEST] * PCR_COUNT

    def value(self, index: int) -> bytes:
        self._check_index(index)
        return self._registers[index]

    def extend(self, index: int, measurement: bytes) -> bytes:
        self._check_index(index)
        if len(measurement) != DIGEST_LEN:
            raise ValueError("measurement must be a 20-byte digest")
        self._registers[index] = crypto.hash160(self._registers[index] + measurement)
        return self._registers[index]

    def reset(self) -> None:
        self._registers = [ZERO_DIGEST] * PCR_COUNT

    @staticmethod
    def _check_index(index: int) -> None:
        if not 0 <= index < PCR_COUNT:
            raise IndexError(f"pcr index {index} out of range 0..{PCR_COUNT - 1}")


@dataclass
class AikRecord:
    aik_id: str
    key: KeyPair
    batch_id: str
    used: bool = False


@dataclass(frozen=True)
class Quote:
    pcr_selection: tuple
    pcr_values: tuple  # hex digests, parallel to pcr_selection
    nonce: bytes
    aik_public: bytes
    signature: bytes

    def signed_payload(self) -> bytes:
        return _QUOTE_TAG + crypto.canonical_bytes(
            {
                "selection": list(self.pcr_selection),
                "values": list(self.pcr_values),
                "nonce": self.nonce.hex(),
            }
        )


@dataclass
class ShieldedSlot:
    slot_id: str
    value: object  # unsigned counter (int) or opaque bytes
    access_policy: dict  # pcr index -> required digest bytes


@dataclass(frozen=True)
class EkCertificate:
    """Manufacturer-signed statement over the EK public key and device model."""

    ek_public: bytes
    model: str
    manufacturer_public: bytes
    signature: bytes

    def signed_payload(self) -> bytes:
        return crypto.canonical_bytes(
            {"ek_public": self.ek_public.hex(), "model": self.model}
        )

    def to_fields(self) -> dict:
        return {
            "ek_public": self.ek_public.hex(),
            "model": self.model,
            "manufacturer_public": self.manufacturer_public.hex(),
            "signature": self.signature.hex(),
        }


class Manufacturer:
    """Root of the EK certificate chain."""

    def __init__(self, rng: Rng, name: str = "manufacturer"):
        self.name = name
        self.root = crypto.keygen(rng.fork(f"mfr:{name}"))

    def endorse(self, ek_public: bytes, model: str) -> EkCertificate:
        payload = crypto.canonical_bytes({"ek_public": ek_public.hex(), "model": model})
        return EkCertificate(
            ek_public=ek_public,
            model=model,
            manufacturer_public=self.root.public,
            signature=crypto.sign(self.root, payload),
        )


@dataclass
class TrustAnchor:
    """The per-device TPM emulation."""

    device_id: str
    rng: Rng
    ek: KeyPair
    ek_certificate: EkCertificate
    one_time_aiks: bool = True
    pcrs: PcrBank = field(default_factory=PcrBank)
    aiks: dict = field(default_factory=dict)
    slots: dict = field(default_factory=dict)
    _batch_counter: int = 0

    @classmethod
    def manufacture(
        cls,
        device_id: str,
        rng: Rng,
        manufacturer: Manufacturer,
        model: str = "trusted-handset",
        one_time_aiks: bool = True,
    ) -> "TrustAnchor":
        ek = crypto.keygen(rng.fork("ek"))
        cert = manufacturer.endorse(ek.public, model)
        return cls(
            device_id=device_id,
            rng=rng,
            ek=ek,
            ek_certificate=cert,
            one_time_aiks=one_time_aiks,
        )

    # -- PCRs ------------------------------------------------------------

    def extend(self, index: int, measurement: bytes) -> bytes:
        return self.pcrs.extend(index, measurement)

    def pcr_value(self, index: int) -> bytes:
        return self.pcrs.value(index)

    def reset(self) -> None:
        self.pcrs.reset()

    # -- AIKs and quotes ---------------------------------------------------

    def create_aik_batch(self, count: int) -> list:
        """count fresh AIKs sharing a new batch id; returns the records
        (callers export only the public halves)."""
        if count < 2:
            raise ValueError("a batch of one cannot sustain replenishment; need count >= 2")
        self._batch_counter += 1
        batch_id = f"{self.device_id}-batch{self._batch_counter}"
        records = []
        for i in range(count):
            key = crypto.keygen(self.rng.fork(f"aik:{batch_id}:{i}"))
            record = AikRecord(aik_id=f"{batch_id}-aik{i}", key=key, batch_id=batch_id)
            self.aiks[record.aik_id] = record
            records.append(record)
        return records

    def _take_aik(self, aik_id: str) -> AikRecord:
        record = self.aiks.get(aik_id)
        if record is None:
            raise ProtocolError("unknown-aik", aik_id)
        if record.used and self.one_time_aiks:
            raise ProtocolError("aik-already-used", aik_id)
        record.used = True
        return record

    def quote(self, aik_id: str, pcr_selection, nonce: bytes) -> Quote:
        record = self._take_aik(aik_id)
        selection = tuple(pcr_selection)
        values = tuple(self.pcrs.value(i).hex() for i in selection)
        q = Quote(
            pcr_selection=selection,
            pcr_values=values,
            nonce=bytes(nonce),
            aik_public=record.key.public,
            signature=b"",
        )
        sig = crypto.sign(record.key, q.signed_payload())
        return Quote(selection, values, bytes(nonce), record.key.public, sig)

    def sign_replenishment(self, aik_id: str, new_publics: list) -> bytes:
        """Authenticate a batch replenishment with (and consume) the last AIK."""
        record = self._take_aik(aik_id)
        payload = _REPLENISH_TAG + crypto.canonical_bytes(
            [p.hex() for p in new_publics]
        )
        return crypto.sign(record.key, payload)

    def ek_challenge_response(self, challenge: bytes) -> bytes:
        return crypto.sign(self.ek, _EK_TAG + bytes(challenge))

    # -- shielded storage --------------------------------------------------

    def define_slot(self, slot_id: str, value, access_policy: dict) -> None:
        """access_policy maps pcr index -> digest the register must hold."""
        if isinstance(value, int) and value < 0:
            raise ValueError("counter slots hold unsigned values")
        self.slots[slot_id] = ShieldedSlot(slot_id, value, dict(access_policy))

    def _open_slot(self, slot_id: str) -> ShieldedSlot:
        slot = self.slots.get(slot_id)
        if slot is None:
            raise ProtocolError("unknown-slot", slot_id)
        for index, required in slot.access_policy.items():
            if self.pcrs.value(index) != required:
                raise ProtocolError("sealed-against-state", slot_id)
        return slot

    def slot_read(self, slot_id: str):
        return self._open_slot(slot_id).value

    def slot_decrement(self, slot_id: str, amount: int) -> int:
        if amount < 0:
            raise ValueError("decrement amount must be non-negative")
        slot = self._open_slot(slot_id)
        if not isinstance(slot.value, int):
            raise ValueError(f"slot {slot_id} is not a counter")
        if amount > slot.value:
            raise ProtocolError("insufficient-balance", f"{slot.value} < {amount}")
        slot.value -= amount
        return slot.value

    def slot_credit(self, slot_id: str, amount: int) -> int:
        """Voucher-authorized top-up path; voucher validation happens in the
        prepaid client, the anchor only gates on platform state."""
        if amount < 0:
            raise ValueError("credit amount must be non-negative")
        slot = self._open_slot(slot_id)
        if not isinstance(slot.value, int):
            raise ValueError(f"slot {slot_id} is not a counter")
        slot.value += amount
        return slot.value


def verify_quote_signature(quote: Quote) -> bool:
    return crypto.verify(quote.aik_public, quote.signed_payload(), quote.signature)


def verify_replenishment_signature(aik_public: bytes, new_publics: list, signature: bytes) -> bool:
    payload = _REPLENISH_TAG + crypto.canonical_bytes([p.hex() for p in new_publics])
    return crypto.verify(aik_public, payload, signature)


def verify_ek_response(ek_public: bytes, challenge: bytes, signature: bytes) -> bool:
    return crypto.verify(ek_public, _EK_TAG + bytes(challenge), signature)


def verify_ek_certificate(cert: EkCertificate, trusted_roots) -> bool:
    if cert.manufacturer_public not in trusted_roots:
        return False
    return crypto.verify(cert.manufacturer_public, cert.signed_payload(), cert.signature)
