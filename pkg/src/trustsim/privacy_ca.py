"""Privacy CA: EK-verified enrollment, AIK certificate batches, replenishment.

The CA doubles as the identity provider for service access: services trust
its root and accept its one-time AIK certificates as pseudonymous
authentication tokens. Certificates carry no EK-derived field, so two
authentications are linkable only by the CA itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import crypto
from .anchor import (
    EkCertificate,
    TrustAnchor,
    verify_ek_certificate,
    verify_ek_response,
    verify_replenishment_signature,
)
from .crypto import CERT_HASH_ALG, Rng
from .errors import ProtocolError

DEFAULT_BATCH_SIZE = 10
DEFAULT_VALIDITY_TICKS = 1000


@dataclass(frozen=True)
class AikCertificate:
    """CA-signed binding of an AIK public key to "valid platform in domain".

    Field set is deliberately EK-free; hash_alg records the digest used for
    the signed payload.
    """

    aik_public: bytes
    domain_id: str
    valid_from: int
    valid_until: int
    hash_alg: str
    pca_signature: bytes

    def signed_payload(self) -> bytes:
        body = crypto.canonical_bytes(
            {
                "aik_public": self.aik_public.hex(),
                "domain_id": self.domain_id,
                "valid_from": self.valid_from,
                "valid_until": self.valid_until,
                "hash_alg": self.hash_alg,
            }
        )
        return crypto.hash256(body) if self.hash_alg == "sha256" else body

    def to_fields(self) -> dict:
        return {
            "aik_public": self.aik_public.hex(),
            "domain_id": self.domain_id,
            "valid_from": self.valid_from,
            "valid_until": self.valid_until,
            "hash_alg": self.hash_alg,
            "pca_signature": self.pca_signature.hex(),
        }


def verify_aik_certificate(cert: AikCertificate, pca_root: bytes) -> bool:
    return crypto.verify(pca_root, cert.signed_payload(), cert.pca_signature)


class PrivacyCa:
    """Certifies AIK batches for one service domain and tracks replenishment."""

    def __init__(
        self,
        name: str,
        rng: Rng,
        trusted_manufacturer_roots,
        domain_id: str,
        validity_ticks: int = DEFAULT_VALIDITY_TICKS,
    ):
        self.name = name
        self.rng = rng.fork(f"pca:{name}")
        self.root = crypto.keygen(self.rng.fork("root"))
        self.trusted_roots = set(trusted_manufacturer_roots)
        self.domain_id = domain_id
        self.validity_ticks = validity_ticks
        self._consumed_replenish_aiks = set()
        self._issued = set()  # aik public hex of every certificate ever issued

    def liveness_challenge(self) -> bytes:
        return self.rng.bytes(16)

    def _certify(self, aik_public: bytes, now: int) -> AikCertificate:
        cert = AikCertificate(
            aik_public=aik_public,
            domain_id=self.domain_id,
            valid_from=now,
            valid_until=now + self.validity_ticks,
            hash_alg=CERT_HASH_ALG,
            pca_signature=b"",
        )
        sig = crypto.sign(self.root, cert.signed_payload())
        issued = AikCertificate(
            aik_public, self.domain_id, now, now + self.validity_ticks, CERT_HASH_ALG, sig
        )
        self._issued.add(aik_public.hex())
        return issued

    def enroll(
        self,
        ek_certificate: EkCertificate,
        aik_publics,
        challenge: bytes,
        ek_response: bytes,
        now: int,
    ) -> list:
        """Issue one certificate per AIK after checking EK provenance and
        liveness. The EK itself never appears in the issued certificates."""
        if not verify_ek_certificate(ek_certificate, self.trusted_roots):
            raise ProtocolError("untrusted-ek", ek_certificate.model)
        if not verify_ek_response(ek_certificate.ek_public, challenge, ek_response):
            raise ProtocolError("ek-liveness-failed")
        return [self._certify(public, now) for public in aik_publics]

    def replenish(
        self,
        old_certificate: AikCertificate,
        new_aik_publics,
        last_aik_signature: bytes,
        now: int,
    ) -> list:
        """Certify a new batch, authenticated by the last AIK of the old one.

        Each old-batch AIK buys exactly one replenishment; replaying the
        request is rejected."""
        if not verify_aik_certificate(old_certificate, self.root.public):
            raise ProtocolError("untrusted-replenish-cert")
        if not old_certificate.valid_from <= now <= old_certificate.valid_until:
            raise ProtocolError("replenish-cert-expired")
        if old_certificate.aik_public.hex() not in self._issued:
            raise ProtocolError("untrusted-replenish-cert", "certificate not issued here")
        if old_certificate.aik_public.hex() in self._consumed_replenish_aiks:
            raise ProtocolError("replenish-replay")
        if not verify_replenishment_signature(
            old_certificate.aik_public, list(new_aik_publics), last_aik_signature
        ):
            raise ProtocolError("bad-replenish-signature")
        self._consumed_replenish_aiks.add(old_certificate.aik_public.hex())
        return [self._certify(public, now) for public in new_aik_publics]


@dataclass(frozen=True)
class ReplenishRequest:
    """Materials for one batch replenishment, ready to go on the wire."""

    old_certificate: AikCertificate
    records: list
    publics: list
    signature: bytes


@dataclass
class CredentialWallet:
    """Device-side batch of (AIK, certificate) pairs with one-time take().

    Replenishment is due exactly when one unused credential remains: that
    last credential authenticates the request for the next batch.
    """

    anchor: TrustAnchor
    pca: PrivacyCa
    batch_size: int = DEFAULT_BATCH_SIZE
    credentials: list = field(default_factory=list)  # (AikRecord, AikCertificate)
    replenish_count: int = 0

    def enroll(self, now: int) -> list:
        """First batch: prove EK provenance + liveness, get certificates."""
        records = self.anchor.create_aik_batch(self.batch_size)
        challenge = self.pca.liveness_challenge()
        certs = self.pca.enroll(
            self.anchor.ek_certificate,
            [r.key.public for r in records],
            challenge,
            self.anchor.ek_challenge_response(challenge),
            now,
        )
        self.credentials = list(zip(records, certs))
        return certs

    @property
    def count_unused(self) -> int:
        return len(self.credentials)

    @property
    def needs_replenish(self) -> bool:
        return len(self.credentials) == 1

    def take(self) -> tuple:
        """Consume the next one-time credential: (AikRecord, AikCertificate)."""
        if not self.credentials:
            raise ProtocolError("wallet-empty", self.anchor.device_id)
        return self.credentials.pop(0)

    def prepare_replenish(self) -> ReplenishRequest:
        """Consume the last old credential and sign the fresh batch's publics."""
        last_record, last_cert = self.take()
        records = self.anchor.create_aik_batch(self.batch_size)
        publics = [r.key.public for r in records]
        signature = self.anchor.sign_replenishment(last_record.aik_id, publics)
        return ReplenishRequest(last_cert, records, publics, signature)

    def install_batch(self, records, certs) -> None:
        self.credentials = list(zip(records, certs))
        self.replenish_count += 1

    def replenish(self, now: int) -> list:
        """Spend the last old credential to certify a fresh batch (direct,
        unrecorded path; scenarios use flows.replenish_flow instead)."""
        request = self.prepare_replenish()
        certs = self.pca.replenish(
            request.old_certificate, request.publics, request.signature, now
        )
        self.install_batch(request.records, certs)
        return certs


def authenticate_for_service(service, response, challenge, now: int):
    """Service-access authentication is exactly an attestation at the
    service's verifier; acceptance doubles as the access decision."""
    return service.verify(response, challenge, now)
