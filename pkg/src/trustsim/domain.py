"""Sub-domain restriction: generic vs trust credentials, clone handling,
PCR-gated feature policies with location rules.

Devices reach the network with an identity-bearing generic credential;
admission to a restricted sub-domain takes an additional trust credential
(an attested one-time AIK). The registry runs in unbound mode
(first-come-first-served per identity) or bound mode (a joint authority
recorded which AIKs belong to which identity, defeating clones outright).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import crypto
from .attestation import Verifier
from .crypto import KeyPair, Rng
from .errors import ProtocolError
from .flows import attest_flow

UNBOUND = "unbound"
BOUND = "bound"

_ACCESS_TAG = b"netaccess:"


@dataclass(frozen=True)
class GenericCredential:
    """c-style network credential: bears the individual device identity.

    Clones share it by construction — copying the object is the attack.
    """

    device_identity: str
    issuer: str
    secret: KeyPair

    def access_proof(self) -> bytes:
        return crypto.sign(self.secret, _ACCESS_TAG + self.device_identity.encode())


@dataclass(frozen=True)
class Session:
    session_id: str
    identity: str


@dataclass(frozen=True)
class Admission:
    admitted: bool
    reason: str  # "ok" | "credential-inconsistency" | "clone-conflict" | "attestation-failed"


@dataclass
class SubdomainRegistry:
    mode: str = UNBOUND
    admitted: dict = field(default_factory=dict)  # identity -> trust fingerprint
    bindings: dict = field(default_factory=dict)  # identity -> set of issued fingerprints

    def record_binding(self, identity: str, fingerprints) -> None:
        self.bindings.setdefault(identity, set()).update(fingerprints)

    def decide(self, identity: str, fingerprint: str, attestation_accepted: bool) -> Admission:
        """Admission rules; bound mode checks the authority binding first."""
        if self.mode == BOUND and fingerprint not in self.bindings.get(identity, set()):
            return Admission(False, "credential-inconsistency")
        prior = self.admitted.get(identity)
        if prior is not None and prior != fingerprint:
            return Admission(False, "clone-conflict")
        if not attestation_accepted:
            return Admission(False, "attestation-failed")
        self.admitted[identity] = fingerprint
        return Admission(True, "ok")


class MobileNetworkOperator:
    """The MNO party: credential issuance, network sessions, sub-domain registry."""

    def __init__(self, name: str, rng: Rng, registry_mode: str = UNBOUND):
        self.name = name
        self.rng = rng.fork(f"mno:{name}")
        self.keys = crypto.keygen(self.rng.fork("keys"))
        self.registry = SubdomainRegistry(mode=registry_mode)
        self._issued = {}  # identity -> public key of the credential secret
        self.sessions = {}  # identity -> list of session ids
        self._session_counter = 0

    def issue_credential(self, identity: str) -> GenericCredential:
        secret = crypto.keygen(self.rng.fork(f"cred:{identity}"))
        self._issued[identity] = secret.public
        return GenericCredential(device_identity=identity, issuer=self.name, secret=secret)

    def network_access(self, identity: str, proof: bytes) -> Session:
        """Basic network logon; clone detection deliberately does NOT happen
        here — two sessions for one identity are both granted."""
        public = self._issued.get(identity)
        if public is None:
            raise ProtocolError("unknown-identity", identity)
        if not crypto.verify(public, _ACCESS_TAG + identity.encode(), proof):
            raise ProtocolError("bad-access-proof", identity)
        self._session_counter += 1
        session = Session(f"sess-{self._session_counter}", identity)
        self.sessions.setdefault(identity, []).append(session.session_id)
        return session


def network_access_flow(sim, device, mno_id: str, mno: MobileNetworkOperator,
                        credential: GenericCredential, channel: str = "mobile"):
    """Recorded logon: identity + possession proof, session or denial back."""
    sim.send(
        device.device_id, mno_id, channel, "network-access",
        {"identity": credential.device_identity, "proof": credential.access_proof().hex()},
        {"identity": "identity", "proof": "plumbing"},
    )
    try:
        session = mno.network_access(credential.device_identity, credential.access_proof())
    except ProtocolError as err:
        sim.send(mno_id, device.device_id, channel, "network-denied",
                 {"code": err.code}, {"code": "plumbing"})
        sim.event("network-denied", device=device.device_id, code=err.code)
        return None
    sim.send(
        mno_id, device.device_id, channel, "network-session",
        {"session_id": session.session_id}, {"session_id": "plumbing"},
    )
    sim.event("network-session", device=device.device_id, session=session.session_id)
    return session


def subdomain_admission_flow(
    sim,
    device,
    mno_id: str,
    mno: MobileNetworkOperator,
    verifier: Verifier,
    session: Session,
    plan=None,
    channel: str = "mobile",
    replenish_via=None,
) -> Admission:
    """Transmit the trust credential (attestation) and apply the registry rules."""
    sim.send(
        device.device_id, mno_id, channel, "subdomain-request",
        {"session_id": session.session_id}, {"session_id": "plumbing"},
    )
    verdict = attest_flow(
        sim, device, mno_id, verifier, channel, plan=plan, replenish_via=replenish_via
    )
    if verdict is None:
        admission = Admission(False, "attestation-failed")
        fingerprint = None
    else:
        response_msg = sim.messages("attestation-response")[-1]
        fingerprint = crypto.hash160(
            bytes.fromhex(response_msg["payload"]["quote"]["aik_public"])
        ).hex()
        admission = mno.registry.decide(session.identity, fingerprint, verdict.accepted)
    sim.send(
        mno_id, device.device_id, channel, "subdomain-verdict",
        {"admitted": admission.admitted, "reason": admission.reason},
        {"admitted": "plumbing", "reason": "plumbing"},
    )
    sim.event(
        "admission",
        mno=mno_id,
        device=device.device_id,
        identity=session.identity,
        fingerprint=fingerprint,
        admitted=admission.admitted,
        reason=admission.reason,
    )
    return admission


# -- feature policies ---------------------------------------------------------

ENFORCED = "enforced"
UNENFORCED = "unenforced"


@dataclass(frozen=True)
class FeaturePolicy:
    base: dict  # feature name -> "enabled" | "disabled"
    location_rules: tuple = ()  # ((location id, {feature: state}), ...)

    def effective(self, location: str) -> dict:
        features = dict(self.base)
        for rule_location, overrides in self.location_rules:
            if rule_location == location:
                features.update(overrides)
        return features


@dataclass(frozen=True)
class PolicyDecision:
    status: str  # ENFORCED | UNENFORCED
    features: dict | None


def apply_policy(policy: FeaturePolicy, location: str, enforcement_attested: bool) -> PolicyDecision:
    """Location-gated feature map — but only a measured, attested enforcement
    component makes it binding; otherwise the device reports unenforced."""
    if not enforcement_attested:
        return PolicyDecision(UNENFORCED, None)
    return PolicyDecision(ENFORCED, policy.effective(location))
