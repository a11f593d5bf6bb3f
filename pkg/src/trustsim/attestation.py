"""Remote attestation: challenge, response, and the verifier's checks.

All failure modes are verdict reasons, never exceptions, and every check
runs (no short-circuit) so a verdict carries the full diagnostic set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import crypto
from .anchor import Quote, verify_quote_signature
from .boot import MeasurementLog, ReferenceDb
from .privacy_ca import AikCertificate, verify_aik_certificate

REASON_OK = "ok"
REASON_BAD_CERT_CHAIN = "bad-cert-chain"
REASON_CERT_EXPIRED = "cert-expired"
REASON_AIK_REUSED = "aik-reused"
REASON_BAD_QUOTE_SIGNATURE = "bad-quote-signature"
REASON_STALE_NONCE = "stale-nonce"
REASON_LOG_PCR_MISMATCH = "log-pcr-mismatch"
REASON_REFERENCE_MISMATCH = "reference-mismatch"

# Fixed evaluation (and reporting) order.
ALL_REASONS = (
    REASON_BAD_CERT_CHAIN,
    REASON_CERT_EXPIRED,
    REASON_AIK_REUSED,
    REASON_BAD_QUOTE_SIGNATURE,
    REASON_STALE_NONCE,
    REASON_LOG_PCR_MISMATCH,
    REASON_REFERENCE_MISMATCH,
)

MIN_NONCE_LEN = 16


@dataclass(frozen=True)
class AttestationChallenge:
    nonce: bytes
    pcr_selection: tuple
    freshness_deadline: int

    def __post_init__(self):
        if len(self.nonce) < MIN_NONCE_LEN:
            raise ValueError(f"nonce must be at least {MIN_NONCE_LEN} bytes")


@dataclass(frozen=True)
class AttestationResponse:
    quote: Quote
    log: MeasurementLog
    certificate: AikCertificate

    def aik_fingerprint(self) -> str:
        return crypto.hash160(self.quote.aik_public).hex()


@dataclass(frozen=True)
class AttestationVerdict:
    accepted: bool
    reasons: tuple

    @classmethod
    def from_failures(cls, failures) -> "AttestationVerdict":
        if failures:
            ordered = tuple(r for r in ALL_REASONS if r in failures)
            return cls(accepted=False, reasons=ordered)
        return cls(accepted=True, reasons=(REASON_OK,))


def recompute_pcr(log: MeasurementLog) -> bytes:
    """Left fold of extend over the logged measurements, from the zero state."""
    acc = crypto.ZERO_DIGEST
    for entry in log.entries:
        acc = crypto.hash160(acc + bytes.fromhex(entry.measurement))
    return acc


def _recompute_register(log: MeasurementLog, register: int) -> bytes:
    acc = crypto.ZERO_DIGEST
    for entry in log.entries:
        if entry.pcr_index == register:
            acc = crypto.hash160(acc + bytes.fromhex(entry.measurement))
    return acc


def verify_attestation(
    response: AttestationResponse,
    challenge: AttestationChallenge,
    pca_root: bytes,
    refs: ReferenceDb,
    used_aiks: set,
    now: int,
) -> AttestationVerdict:
    """The three-step verification plus freshness and one-time-AIK checks.

    used_aiks is the verifier's replay store; the presented AIK is added
    after the reuse check regardless of the other outcomes.
    """
    failures = set()
    quote = response.quote
    cert = response.certificate

    # 1. certificate chains to the privacy CA root and is inside its window
    if not verify_aik_certificate(cert, pca_root):
        failures.add(REASON_BAD_CERT_CHAIN)
    if not cert.valid_from <= now <= cert.valid_until:
        failures.add(REASON_CERT_EXPIRED)

    # 2. one AIK per transaction
    fingerprint = response.aik_fingerprint()
    if fingerprint in used_aiks:
        failures.add(REASON_AIK_REUSED)
    used_aiks.add(fingerprint)

    # 3. quote signed by the certified AIK
    if quote.aik_public != cert.aik_public or not verify_quote_signature(quote):
        failures.add(REASON_BAD_QUOTE_SIGNATURE)

    # 4. fresh response to this challenge
    if quote.nonce != challenge.nonce or now > challenge.freshness_deadline:
        failures.add(REASON_STALE_NONCE)

    # 5. the log refolds to the quoted PCR values
    if tuple(quote.pcr_selection) != tuple(challenge.pcr_selection):
        failures.add(REASON_STALE_NONCE)
    for register, quoted in zip(quote.pcr_selection, quote.pcr_values):
        if _recompute_register(response.log, register).hex() != quoted:
            failures.add(REASON_LOG_PCR_MISMATCH)

    # 6. every logged measurement is a known-good reference value
    for entry in response.log.entries:
        if not refs.matches(entry.component, entry.measurement):
            failures.add(REASON_REFERENCE_MISMATCH)

    return AttestationVerdict.from_failures(failures)


@dataclass
class Verifier:
    """One verifying party: its trust root, references, and replay store.

    Verifiers may share a used_aiks set (a collaboration that pools its
    replay protection) — pass the same set to several instances.
    """

    name: str
    pca_root: bytes
    refs: ReferenceDb
    rng: crypto.Rng
    freshness_window: int = 100
    pcr_selection: tuple = (0,)
    used_aiks: set = field(default_factory=set)

    def make_challenge(self, now: int) -> AttestationChallenge:
        return AttestationChallenge(
            nonce=self.rng.bytes(MIN_NONCE_LEN),
            pcr_selection=self.pcr_selection,
            freshness_deadline=now + self.freshness_window,
        )

    def verify(
        self, response: AttestationResponse, challenge: AttestationChallenge, now: int
    ) -> AttestationVerdict:
        return verify_attestation(
            response, challenge, self.pca_root, self.refs, self.used_aiks, now
        )
