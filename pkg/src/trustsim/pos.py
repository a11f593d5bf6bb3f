"""Point-of-sale purchases over a trusted short-range session.

Two flows: the operator-mediated purchase (signed order to the MNO, signed
acknowledgement back, POS delivers on a verified ack) and the
separation-of-duties flow (one-time token validated at the authentication
provider, billing package of exactly {auth token, grand total, signature}
to the charging provider). The POS has no network uplink of its own: all
its backhaul rides through the customer device as sealed envelopes, so the
carrier sees only uniform encrypted shapes.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from . import crypto
from .attestation import Verifier
from .crypto import KeyPair
from .device import TrustedDevice
from .flows import (
    AttackPlan,
    attest_flow,
    challenge_fields,
    expired_cert_override,
    mangle_and_respond,
    parse_challenge,
    parse_response,
    response_fields,
)
from .harness import seal
from .privacy_ca import verify_aik_certificate

_ACK_TAG = b"ack:"
_PRICED_TAG = b"pricelist:"
_ORDER_TAG = b"order:"
_BILLING_TAG = b"billing:"
_CONFIRM_TAG = b"confirm:"

CHANNEL_SR = "sr"
CHANNEL_MOBILE = "mobile"
CHANNEL_NET = "net"


@dataclass(frozen=True)
class PriceList:
    entries: tuple  # ((good id, price), ...)
    signature: bytes  # by the POS owner

    @staticmethod
    def build(entries, owner_keys: KeyPair) -> "PriceList":
        body = _PRICED_TAG + crypto.canonical_bytes([list(e) for e in entries])
        return PriceList(tuple(tuple(e) for e in entries), crypto.sign(owner_keys, body))

    def verify(self, owner_public: bytes) -> bool:
        body = _PRICED_TAG + crypto.canonical_bytes([list(e) for e in self.entries])
        return crypto.verify(owner_public, body, self.signature)

    def price_of(self, good: str) -> int:
        for name, price in self.entries:
            if name == good:
                return price
        raise ValueError(f"good not on the price list: {good}")


def make_billing_package(auth_token: str, grand_total: int, signer: KeyPair) -> dict:
    """The charging-provider package: exactly these three fields, enforced
    here and re-checked structurally by the transcript auditor."""
    body = _BILLING_TAG + crypto.canonical_bytes(
        {"auth_token": auth_token, "grand_total": grand_total}
    )
    return {
        "auth_token": auth_token,
        "grand_total": grand_total,
        "signature": crypto.sign(signer, body).hex(),
    }


def verify_billing_package(package: dict, signer_publics) -> bool:
    if set(package) != {"auth_token", "grand_total", "signature"}:
        return False
    body = _BILLING_TAG + crypto.canonical_bytes(
        {"auth_token": package["auth_token"], "grand_total": package["grand_total"]}
    )
    return any(
        crypto.verify(public, body, bytes.fromhex(package["signature"]))
        for public in signer_publics
    )


@dataclass
class PosContext:
    """Roster and trust material for one POS world; scenarios assemble it."""

    device: TrustedDevice
    pos: TrustedDevice
    device_id: str
    pos_id: str
    mno_id: str
    pos_owner_id: str
    charging_id: str
    auth_id: str  # device-domain CA / authentication provider (may equal mno_id)
    vendor_id: str | None = None
    payment_id: str | None = None
    # verification material
    pos_verifier_for_device: Verifier | None = None  # POS-side local check (operator flow)
    device_verifier_for_pos: Verifier | None = None  # device-side check of the POS
    auth_verifier: Verifier | None = None  # token decisions (separation flow)
    # signing parties
    mno_keys: KeyPair | None = None
    pos_owner_keys: KeyPair | None = None
    charging_keys: KeyPair | None = None
    pos_delegate_keys: KeyPair | None = None  # owner-registered key the POS signs with
    device_credential: object = None  # GenericCredential for operator-billed orders
    price_list: PriceList | None = None
    session_keys: dict = field(default_factory=dict)
    _counters: dict = field(default_factory=lambda: {"session": 0, "order": 0})

    def next_id(self, kind: str) -> str:
        self._counters[kind] += 1
        return f"{kind}-{self._counters[kind]}"


def _relay(sim, ctx: PosContext, origin: str, dest: str, msg_type: str,
           payload: dict, labels: dict) -> None:
    """POS backhaul through the device: short-range hop, then a sealed hop
    over the mobile network (or the reverse). Relays never read the interior."""
    body = seal([dest], payload, labels)
    if origin == ctx.pos_id:
        sim.send(origin, ctx.device_id, CHANNEL_SR, f"{msg_type}-relay",
                 {"env": body}, {"env": "plumbing"}, encrypted=True)
        sim.send(ctx.device_id, dest, CHANNEL_MOBILE, msg_type,
                 {"env": body}, {"env": "plumbing"}, encrypted=True)
    elif dest == ctx.pos_id:
        sim.send(origin, ctx.device_id, CHANNEL_MOBILE, msg_type,
                 {"env": body}, {"env": "plumbing"}, encrypted=True)
        sim.send(ctx.device_id, dest, CHANNEL_SR, f"{msg_type}-relay",
                 {"env": body}, {"env": "plumbing"}, encrypted=True)
    else:
        raise ValueError("relay endpoints must include the POS")


# -- session establishment -----------------------------------------------------


def mutual_attest_session(sim, ctx: PosContext, plan: AttackPlan | None = None):
    """Operator-flow handshake: both sides verify the other locally.

    Each side spends a one-time credential; the session id seeds the
    transport keys. Returns the session id or None on abort."""
    device_verdict = attest_flow(
        sim, ctx.device, ctx.pos_id, ctx.pos_verifier_for_device, CHANNEL_SR, plan=plan
    )
    if device_verdict is None or not device_verdict.accepted:
        sim.event("abort", party=ctx.pos_id, code="session-attestation-failed",
                  peer=ctx.device_id)
        return None
    pos_verdict = attest_flow(
        sim, ctx.pos, ctx.device_id, ctx.device_verifier_for_pos, CHANNEL_SR
    )
    if pos_verdict is None or not pos_verdict.accepted:
        sim.event("abort", party=ctx.device_id, code="session-attestation-failed",
                  peer=ctx.pos_id)
        return None
    return _open_session(sim, ctx)


def _open_session(sim, ctx: PosContext) -> str:
    session_id = ctx.next_id("session")
    # fresh transport keys derived under the attested exchange: fold of the
    # two challenge nonces both sides just answered
    nonces = [m["payload"]["nonce"] for m in sim.messages("attestation-challenge")[-2:]]
    ctx.session_keys[session_id] = crypto.hash160("".join(nonces).encode()).hex()
    sim.event("secure-session", device=ctx.device_id, pos=ctx.pos_id, session=session_id)
    return session_id


def exchange_price_list(sim, ctx: PosContext) -> bool:
    """Step 1: signed price list over the established channel."""
    payload = {
        "entries": [list(e) for e in ctx.price_list.entries],
        "signature": ctx.price_list.signature.hex(),
    }
    sim.send(ctx.pos_id, ctx.device_id, CHANNEL_SR, "price-list",
             payload, {"entries": "price", "signature": "plumbing"}, encrypted=True)
    if not ctx.price_list.verify(ctx.pos_owner_keys.public):
        sim.event("abort", party=ctx.device_id, code="bad-price-list")
        return False
    return True


# -- operator-mediated purchase (device -> MNO -> ack -> POS delivers) ----------


def purchase_via_operator(
    sim,
    ctx: PosContext,
    good: str,
    encrypted: bool = True,
    notify_vendor: bool = True,
    notify_payment: bool = True,
    check_pos_via_mno: bool = False,
) -> str | None:
    """The seven-step operator flow. With encryption on, the good travels
    sealed for the vendor and the operator never learns it."""
    if check_pos_via_mno:
        # operator vouches for the POS pseudonym; its identity is revealed to it
        _, pos_cert = ctx.pos.wallet.credentials[0]
        sim.send(ctx.device_id, ctx.mno_id, CHANNEL_MOBILE, "pos-identity-check",
                 {"pos_certificate": pos_cert.to_fields()},
                 {"pos_certificate": "token"}, encrypted=True)
        ok = verify_aik_certificate(pos_cert, ctx.device_verifier_for_pos.pca_root)
        sim.send(ctx.mno_id, ctx.device_id, CHANNEL_MOBILE, "pos-identity-ok",
                 {"ok": ok}, {"ok": "plumbing"}, encrypted=True)
        if not ok:
            sim.event("abort", party=ctx.device_id, code="pos-identity-unverified")
            return None

    order_id = ctx.next_id("order")
    price = ctx.price_list.price_of(good)
    good_field = seal([ctx.vendor_id], {"good_id": good}, {"good_id": "good"}) \
        if encrypted and ctx.vendor_id else good
    order_body = {
        "order_id": order_id,
        "account": ctx.device.identity,
        "price": price,
        "modality": "operator-account",
        "good": good_field,
    }
    signature = crypto.sign(ctx.device_credential.secret,
                            _ORDER_TAG + crypto.canonical_bytes(order_body))
    sim.send(
        ctx.device_id, ctx.mno_id, CHANNEL_MOBILE, "purchase-order",
        {**order_body, "signature": signature.hex()},
        {"order_id": "plumbing", "account": "identity", "price": "price",
         "modality": "plumbing", "good": "good", "signature": "plumbing"},
        encrypted=True,
    )
    # operator verifies the subscriber's signature before acknowledging
    if not crypto.verify(ctx.device_credential.secret.public,
                         _ORDER_TAG + crypto.canonical_bytes(order_body), signature):
        reject = crypto.sign(ctx.mno_keys, _ACK_TAG + crypto.canonical_bytes(
            {"order_id": order_id, "status": "rejected"}))
        sim.send(ctx.mno_id, ctx.device_id, CHANNEL_MOBILE, "purchase-reject",
                 {"order_id": order_id, "signature": reject.hex()},
                 {"order_id": "plumbing", "signature": "plumbing"}, encrypted=True)
        sim.event("abort", party=ctx.mno_id, code="bad-order-signature", order_id=order_id)
        return None

    if notify_vendor and ctx.vendor_id:
        sim.send(ctx.mno_id, ctx.vendor_id, CHANNEL_NET, "vendor-notify",
                 {"order_id": order_id, "good": good_field, "price": price},
                 {"order_id": "plumbing", "good": "good", "price": "price"},
                 encrypted=True)
    if notify_payment and ctx.payment_id:
        sim.send(ctx.mno_id, ctx.payment_id, CHANNEL_NET, "payment-notify",
                 {"order_id": order_id, "price": price, "modality": "operator-account"},
                 {"order_id": "plumbing", "price": "price", "modality": "plumbing"},
                 encrypted=True)

    ack_body = {"order_id": order_id, "status": "ok"}
    ack_sig = crypto.sign(ctx.mno_keys, _ACK_TAG + crypto.canonical_bytes(ack_body))
    sim.send(ctx.mno_id, ctx.device_id, CHANNEL_MOBILE, "purchase-ack",
             {**ack_body, "signature": ack_sig.hex()},
             {"order_id": "plumbing", "status": "plumbing", "signature": "plumbing"},
             encrypted=True)
    relay = sim.send(ctx.device_id, ctx.pos_id, CHANNEL_SR, "purchase-ack-relay",
                     {**ack_body, "signature": ack_sig.hex()},
                     {"order_id": "plumbing", "status": "plumbing", "signature": "plumbing"},
                     encrypted=True)
    if relay is None:
        sim.event("abort", party=ctx.pos_id, code="ack-lost", order_id=order_id)
        return None
    wire_sig = bytes.fromhex(relay.payload["signature"])
    wire_body = {"order_id": relay.payload["order_id"], "status": relay.payload["status"]}
    if not crypto.verify(ctx.mno_keys.public, _ACK_TAG + crypto.canonical_bytes(wire_body),
                         wire_sig) or wire_body["status"] != "ok":
        sim.event("abort", party=ctx.pos_id, code="bad-ack-signature", order_id=order_id)
        return None
    sim.event("ack-verified", order_id=order_id, pos=ctx.pos_id)
    sim.event("delivery", pos=ctx.pos_id, order_id=order_id)
    sim.send(ctx.pos_id, ctx.device_id, CHANNEL_SR, "delivery-confirmation",
             {"order_id": order_id}, {"order_id": "plumbing"}, encrypted=True)
    return order_id


# -- separation-of-duties purchase ----------------------------------------------


def separation_session(
    sim,
    ctx: PosContext,
    plan: AttackPlan | None = None,
    validate_direct: bool = False,
    reuse_response: dict | None = None,
):
    """Steps (i)+(ii): the device authenticates at the POS with a one-time
    token whose acceptance is decided at the authentication provider;
    the device checks the POS pseudonym locally.

    Returns (session_id, token_fingerprint, response_payload) or None.
    The decision travels POS -> owner -> provider unless validate_direct.
    """
    now = expired_cert_override(ctx.device, plan) or sim.tick
    # the decision maker mints the nonce; it reaches the POS down the same path
    challenge = ctx.auth_verifier.make_challenge(now)
    ch_payload, ch_labels = challenge_fields(challenge)
    if validate_direct:
        _relay(sim, ctx, ctx.auth_id, ctx.pos_id, "token-challenge", ch_payload, ch_labels)
    else:
        sim.send(ctx.auth_id, ctx.pos_owner_id, CHANNEL_NET, "token-challenge",
                 ch_payload, ch_labels, encrypted=True)
        _relay(sim, ctx, ctx.pos_owner_id, ctx.pos_id, "token-challenge", ch_payload, ch_labels)
    forward = sim.send(ctx.pos_id, ctx.device_id, CHANNEL_SR, "attestation-challenge",
                       ch_payload, ch_labels, encrypted=True)

    if reuse_response is not None:
        response_payload, presentations = dict(reuse_response), 1
    else:
        wire_challenge = parse_challenge(forward.payload)
        response, presentations = mangle_and_respond(ctx.device, wire_challenge, plan)
        response_payload, _ = response_fields(response)

    verdict = None
    for _ in range(presentations):
        token_msg = sim.send(ctx.device_id, ctx.pos_id, CHANNEL_SR, "auth-token",
                             response_payload,
                             {"quote": "plumbing", "log": "plumbing", "certificate": "token"},
                             encrypted=True)
        if token_msg is None:
            sim.event("abort", party=ctx.pos_id, code="token-lost")
            return None
        wire_payload = token_msg.payload
        labels = {"quote": "plumbing", "log": "plumbing", "certificate": "token"}
        if validate_direct:
            _relay(sim, ctx, ctx.pos_id, ctx.auth_id, "token-validate", wire_payload, labels)
        else:
            _relay(sim, ctx, ctx.pos_id, ctx.pos_owner_id, "token-validate", wire_payload, labels)
            sim.send(ctx.pos_owner_id, ctx.auth_id, CHANNEL_NET, "token-validate",
                     wire_payload, labels, encrypted=True)
        wire_response = parse_response(wire_payload)
        verdict = ctx.auth_verifier.verify(wire_response, challenge, now=max(now, sim.tick))
        sim.event(
            "attestation-verdict",
            verifier=ctx.auth_id,
            subject=ctx.device_id,
            aik_fp=wire_response.aik_fingerprint(),
            accepted=verdict.accepted,
            reasons=list(verdict.reasons),
        )
        verdict_payload = {"ok": verdict.accepted, "reasons": list(verdict.reasons)}
        verdict_labels = {"ok": "plumbing", "reasons": "plumbing"}
        if validate_direct:
            _relay(sim, ctx, ctx.auth_id, ctx.pos_id, "token-verdict",
                   verdict_payload, verdict_labels)
        else:
            sim.send(ctx.auth_id, ctx.pos_owner_id, CHANNEL_NET, "token-verdict",
                     verdict_payload, verdict_labels, encrypted=True)
            _relay(sim, ctx, ctx.pos_owner_id, ctx.pos_id, "token-verdict",
                   verdict_payload, verdict_labels)

    if not verdict.accepted:
        sim.event("abort", party=ctx.pos_id, code="token-rejected",
                  reasons=list(verdict.reasons))
        return None

    # mutual assurance: the device checks the POS pseudonym locally
    pos_verdict = attest_flow(sim, ctx.pos, ctx.device_id, ctx.device_verifier_for_pos,
                              CHANNEL_SR)
    if pos_verdict is None or not pos_verdict.accepted:
        sim.event("abort", party=ctx.device_id, code="session-attestation-failed",
                  peer=ctx.pos_id)
        return None

    session_id = _open_session(sim, ctx)
    token_fp = crypto.hash160(bytes.fromhex(response_payload["quote"]["aik_public"])).hex()
    return session_id, token_fp, response_payload


def separation_purchase(
    sim,
    ctx: PosContext,
    good: str,
    token_fp: str,
    decentralised: bool = False,
) -> str | None:
    """Steps (iii)+(iv): billing through the POS owner (or the POS itself in
    the decentralised variant); delivery only after the owner's signed
    acknowledgement of a confirmed charge."""
    order_id = ctx.next_id("order")
    price = ctx.price_list.price_of(good)

    if not decentralised:
        _relay(sim, ctx, ctx.pos_id, ctx.pos_owner_id, "billing-data",
               {"order_id": order_id, "auth_token": token_fp, "good_id": good, "price": price},
               {"order_id": "plumbing", "auth_token": "token", "good_id": "good",
                "price": "price"})
        package = make_billing_package(token_fp, price, ctx.pos_owner_keys)
        sim.send(ctx.pos_owner_id, ctx.charging_id, CHANNEL_NET, "billing-package",
                 package, {"auth_token": "token", "grand_total": "price",
                           "signature": "plumbing"}, encrypted=True)
        accepted = verify_billing_package(package, [ctx.pos_owner_keys.public])
        confirmation = _confirm(ctx, token_fp, accepted)
        sim.send(ctx.charging_id, ctx.pos_owner_id, CHANNEL_NET, "charge-confirmation",
                 confirmation, {"auth_token": "token", "status": "plumbing",
                                "signature": "plumbing"}, encrypted=True)
        if not _confirmation_ok(ctx, confirmation):
            sim.event("abort", party=ctx.pos_owner_id, code="charge-refused",
                      order_id=order_id)
            return None
        sim.event("charge-confirmed", order_id=order_id, token=token_fp)
        ack = _acknowledgement(ctx, order_id, ctx.pos_owner_keys)
        _relay(sim, ctx, ctx.pos_owner_id, ctx.pos_id, "purchase-acknowledgement",
               ack, {"order_id": "plumbing", "signature": "plumbing"})
    else:
        package = make_billing_package(token_fp, price, ctx.pos_delegate_keys)
        _relay(sim, ctx, ctx.pos_id, ctx.charging_id, "billing-package",
               package, {"auth_token": "token", "grand_total": "price",
                         "signature": "plumbing"})
        accepted = verify_billing_package(
            package, [ctx.pos_owner_keys.public, ctx.pos_delegate_keys.public]
        )
        confirmation = _confirm(ctx, token_fp, accepted)
        _relay(sim, ctx, ctx.charging_id, ctx.pos_id, "charge-confirmation",
               confirmation, {"auth_token": "token", "status": "plumbing",
                              "signature": "plumbing"})
        if not _confirmation_ok(ctx, confirmation):
            sim.event("abort", party=ctx.pos_id, code="charge-refused", order_id=order_id)
            return None
        sim.event("charge-confirmed", order_id=order_id, token=token_fp)
        _relay(sim, ctx, ctx.pos_id, ctx.pos_owner_id, "ack-request",
               {"order_id": order_id, "auth_token": token_fp, "good_id": good,
                "price": price},
               {"order_id": "plumbing", "auth_token": "token", "good_id": "good",
                "price": "price"})
        ack = _acknowledgement(ctx, order_id, ctx.pos_owner_keys)
        _relay(sim, ctx, ctx.pos_owner_id, ctx.pos_id, "purchase-acknowledgement",
               ack, {"order_id": "plumbing", "signature": "plumbing"})

    if not crypto.verify(ctx.pos_owner_keys.public,
                         _ACK_TAG + crypto.canonical_bytes({"order_id": order_id}),
                         bytes.fromhex(ack["signature"])):
        sim.event("abort", party=ctx.pos_id, code="bad-ack-signature", order_id=order_id)
        return None
    sim.event("ack-verified", order_id=order_id, pos=ctx.pos_id)
    sim.event("delivery", pos=ctx.pos_id, order_id=order_id)
    sim.send(ctx.pos_id, ctx.device_id, CHANNEL_SR, "delivery-confirmation",
             {"order_id": order_id}, {"order_id": "plumbing"}, encrypted=True)
    return order_id


def _confirm(ctx: PosContext, token_fp: str, accepted: bool) -> dict:
    status = "confirmed" if accepted else "refused"
    body = {"auth_token": token_fp, "status": status}
    sig = crypto.sign(ctx.charging_keys, _CONFIRM_TAG + crypto.canonical_bytes(body))
    return {**body, "signature": sig.hex()}


def _confirmation_ok(ctx: PosContext, confirmation: dict) -> bool:
    body = {"auth_token": confirmation["auth_token"], "status": confirmation["status"]}
    return confirmation["status"] == "confirmed" and crypto.verify(
        ctx.charging_keys.public,
        _CONFIRM_TAG + crypto.canonical_bytes(body),
        bytes.fromhex(confirmation["signature"]),
    )


def _acknowledgement(ctx: PosContext, order_id: str, keys: KeyPair) -> dict:
    sig = crypto.sign(keys, _ACK_TAG + crypto.canonical_bytes({"order_id": order_id}))
    return {"order_id": order_id, "signature": sig.hex()}


def rotate_pos_pseudonym(sim, ctx: PosContext) -> str:
    """Fresh pseudonym for upcoming sessions. One-time credentials rotate on
    every session anyway; this tops the wallet back up so rotation never
    leaves a service gap."""
    if ctx.pos.wallet.needs_replenish:
        from .flows import replenish_flow

        replenish_flow(sim, ctx.pos, ctx.pos_owner_id, ctx.pos.wallet.pca, CHANNEL_SR)
    _, cert = ctx.pos.wallet.credentials[0]
    return crypto.hash160(cert.aik_public).hex()


def control_exchange(sim, device_id: str, sink_id: str, count: int = 1) -> None:
    """An arbitrary encrypted device session: what the carrier view of any
    relayed POS traffic must be indistinguishable from."""
    for i in range(count):
        body = seal([sink_id], {"blob": f"opaque-{i}"}, {"blob": "plumbing"})
        sim.send(device_id, sink_id, CHANNEL_MOBILE, "control-env",
                 {"env": body}, {"env": "plumbing"}, encrypted=True)
