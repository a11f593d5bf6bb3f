"""Recorded protocol flows shared by the scenario modules.

Wire format helpers (challenge/response/certificate as labeled message
payloads) plus the standard attestation exchange with its five injectable
attacks. The verifier always checks what came off the wire, so drop and
modify hooks behave like real tampering.
"""

from __future__ import annotations

import dataclasses

from . import boot as mb
from . import crypto
from .attestation import AttestationChallenge, AttestationResponse, Verifier
from .anchor import Quote
from .device import TrustedDevice
from .privacy_ca import AikCertificate, PrivacyCa

# The five generic attestation attacks and the reason each must trigger.
ATTESTATION_ATTACKS = ("forge-log", "tamper", "replay-aik", "wrong-nonce", "expired-cert")
EXPECTED_ATTACK_REASONS = {
    "forge-log": "log-pcr-mismatch",
    "tamper": "reference-mismatch",
    "replay-aik": "aik-reused",
    "wrong-nonce": "stale-nonce",
    "expired-cert": "cert-expired",
}

TAMPER_PAYLOAD = b"tampered-code"


class AttackPlan:
    """Which attacks this run injects; each fires once, at the first
    opportunity (device setup for tamper, first attestation otherwise)."""

    def __init__(self, names=()):
        self.names = set(names)
        self._fired = set()

    def take(self, name: str) -> bool:
        if name in self.names and name not in self._fired:
            self._fired.add(name)
            return True
        return False

    def pending_attestation_attack(self) -> str | None:
        for name in ("forge-log", "replay-aik", "wrong-nonce", "expired-cert"):
            if name in self.names and name not in self._fired:
                return name
        return None


def apply_setup_attacks(device: TrustedDevice, plan: AttackPlan | None) -> None:
    """Pre-boot injections; call after provisioning, before boot."""
    if plan and plan.take("tamper"):
        device.tamper(device.chain[-1].name, TAMPER_PAYLOAD)


# -- wire format ------------------------------------------------------------


def challenge_fields(challenge: AttestationChallenge) -> tuple:
    payload = {
        "nonce": challenge.nonce.hex(),
        "selection": list(challenge.pcr_selection),
        "deadline": challenge.freshness_deadline,
    }
    labels = {"nonce": "plumbing", "selection": "plumbing", "deadline": "plumbing"}
    return payload, labels


def parse_challenge(payload: dict) -> AttestationChallenge:
    return AttestationChallenge(
        nonce=bytes.fromhex(payload["nonce"]),
        pcr_selection=tuple(payload["selection"]),
        freshness_deadline=payload["deadline"],
    )


def response_fields(response: AttestationResponse) -> tuple:
    quote = response.quote
    payload = {
        "quote": {
            "selection": list(quote.pcr_selection),
            "values": list(quote.pcr_values),
            "nonce": quote.nonce.hex(),
            "aik_public": quote.aik_public.hex(),
            "signature": quote.signature.hex(),
        },
        "log": response.log.to_fields(),
        "certificate": response.certificate.to_fields(),
    }
    labels = {"quote": "plumbing", "log": "plumbing", "certificate": "token"}
    return payload, labels


def parse_response(payload: dict) -> AttestationResponse:
    q = payload["quote"]
    quote = Quote(
        pcr_selection=tuple(q["selection"]),
        pcr_values=tuple(q["values"]),
        nonce=bytes.fromhex(q["nonce"]),
        aik_public=bytes.fromhex(q["aik_public"]),
        signature=bytes.fromhex(q["signature"]),
    )
    c = payload["certificate"]
    cert = AikCertificate(
        aik_public=bytes.fromhex(c["aik_public"]),
        domain_id=c["domain_id"],
        valid_from=c["valid_from"],
        valid_until=c["valid_until"],
        hash_alg=c["hash_alg"],
        pca_signature=bytes.fromhex(c["pca_signature"]),
    )
    return AttestationResponse(
        quote=quote, log=mb.MeasurementLog.from_fields(payload["log"]), certificate=cert
    )


# -- flows -------------------------------------------------------------------


def replenish_flow(sim, device: TrustedDevice, pca_id: str, pca: PrivacyCa, channel: str) -> None:
    """Spend the device's last credential to certify a fresh batch, on the record."""
    from .harness import seal

    request = device.wallet.prepare_replenish()
    body = seal(
        [pca_id],
        {
            "old_certificate": request.old_certificate.to_fields(),
            "new_publics": [p.hex() for p in request.publics],
            "signature": request.signature.hex(),
        },
        {"old_certificate": "token", "new_publics": "token", "signature": "plumbing"},
    )
    sim.send(device.device_id, pca_id, channel, "replenish-request",
             {"env": body}, {"env": "plumbing"}, encrypted=True)
    certs = pca.replenish(request.old_certificate, request.publics, request.signature, now=sim.tick)
    reply = seal([device.device_id],
                 {"certificates": [c.to_fields() for c in certs]},
                 {"certificates": "token"})
    sim.send(pca_id, device.device_id, channel, "replenish-certs",
             {"env": reply}, {"env": "plumbing"}, encrypted=True)
    device.wallet.install_batch(request.records, certs)
    sim.event(
        "replenishment",
        device=device.device_id,
        pca=pca_id,
        batch_size=len(certs),
        count=device.wallet.replenish_count,
    )


def expired_cert_override(device: TrustedDevice, plan: AttackPlan | None) -> int | None:
    """expired-cert injection: run the exchange after the credential window
    closed. Consult before minting the challenge."""
    if plan and plan.take("expired-cert"):
        return device.wallet.credentials[0][1].valid_until + 1
    return None


def mangle_and_respond(device: TrustedDevice, wire_challenge: AttestationChallenge,
                       plan: AttackPlan | None) -> tuple:
    """Device-side response with the response-level injections applied.

    Returns (response, presentations); presentations is 2 for a replay-aik
    injection (the same response goes on the wire twice)."""
    if plan and plan.take("wrong-nonce"):
        mangled = crypto.hash256(wire_challenge.nonce)[:16]
        wire_challenge = dataclasses.replace(wire_challenge, nonce=mangled)
    response = device.respond(wire_challenge)
    if plan and plan.take("forge-log"):
        response = dataclasses.replace(
            response, log=mb.forge_log(response.log, 0, crypto.hash160(b"forged-entry"))
        )
    presentations = 2 if plan and plan.take("replay-aik") else 1
    return response, presentations


def attest_flow(
    sim,
    device: TrustedDevice,
    verifier_id: str,
    verifier: Verifier,
    channel: str,
    plan: AttackPlan | None = None,
    encrypted: bool = False,
    replenish_via: tuple | None = None,
) -> "object | None":
    """One challenge-response attestation, recorded; returns the verdict.

    Returns None when an attack hook dropped a message. With a replay-aik
    injection the response is presented twice and the second (rejected)
    verdict is returned.
    """
    now = expired_cert_override(device, plan) or sim.tick

    challenge = verifier.make_challenge(now)
    payload, labels = challenge_fields(challenge)
    msg = sim.send(verifier_id, device.device_id, channel, "attestation-challenge",
                   payload, labels, encrypted=encrypted)
    if msg is None:
        sim.event("abort", party=device.device_id, code="challenge-lost")
        return None
    wire_challenge = parse_challenge(msg.payload)

    response, presentations = mangle_and_respond(device, wire_challenge, plan)
    if device.wallet.needs_replenish and replenish_via is not None:
        pca_id, pca, replenish_channel = replenish_via
        replenish_flow(sim, device, pca_id, pca, replenish_channel)

    verdict = None
    for _ in range(presentations):
        payload, labels = response_fields(response)
        msg = sim.send(device.device_id, verifier_id, channel, "attestation-response",
                       payload, labels, encrypted=encrypted)
        if msg is None:
            sim.event("abort", party=verifier_id, code="response-lost")
            return None
        wire_response = parse_response(msg.payload)
        verdict = verifier.verify(wire_response, challenge, now=max(now, sim.tick))
        sim.event(
            "attestation-verdict",
            verifier=verifier_id,
            subject=device.device_id,
            aik_fp=wire_response.aik_fingerprint(),
            accepted=verdict.accepted,
            reasons=list(verdict.reasons),
        )
    return verdict


def enroll_flow(sim, device: TrustedDevice, pca_id: str, pca: PrivacyCa,
                batch_size: int, channel: str) -> None:
    """Recorded batch enrollment: EK provenance + liveness in a sealed
    request, certificates sealed back. The EK reaches the CA and nobody
    else — linkage by the CA is inherent."""
    from .privacy_ca import CredentialWallet
    from .harness import seal

    records = device.anchor.create_aik_batch(batch_size)
    challenge = pca.liveness_challenge()
    challenge_env = seal([device.device_id], {"nonce": challenge.hex()}, {"nonce": "plumbing"})
    sim.send(pca_id, device.device_id, channel, "enroll-challenge",
             {"env": challenge_env}, {"env": "plumbing"}, encrypted=True)
    request = seal(
        [pca_id],
        {
            "ek_certificate": device.anchor.ek_certificate.to_fields(),
            "aik_publics": [r.key.public.hex() for r in records],
            "liveness": device.anchor.ek_challenge_response(challenge).hex(),
        },
        {"ek_certificate": "identity", "aik_publics": "token", "liveness": "plumbing"},
    )
    sim.send(device.device_id, pca_id, channel, "enroll-request",
             {"env": request}, {"env": "plumbing"}, encrypted=True)
    certs = pca.enroll(
        device.anchor.ek_certificate,
        [r.key.public for r in records],
        challenge,
        device.anchor.ek_challenge_response(challenge),
        now=sim.tick,
    )
    reply = seal([device.device_id],
                 {"certificates": [c.to_fields() for c in certs]},
                 {"certificates": "token"})
    sim.send(pca_id, device.device_id, channel, "enroll-certs",
             {"env": reply}, {"env": "plumbing"}, encrypted=True)
    wallet = CredentialWallet(device.anchor, pca, batch_size=batch_size)
    wallet.credentials = list(zip(records, certs))
    device.wallet = wallet
