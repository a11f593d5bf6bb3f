"""POS flows: mutual sessions, both purchase variants, privacy of parties."""

import dataclasses

import pytest

from trustsim import crypto, pos
from trustsim.anchor import Manufacturer
from trustsim.attestation import Verifier
from trustsim.crypto import Rng
from trustsim.device import TrustedDevice, standard_chain
from trustsim.domain import MobileNetworkOperator, network_access_flow
from trustsim.flows import apply_setup_attacks, enroll_flow
from trustsim.harness import MOBILE_NETWORK, SHORT_RANGE, Simulation, canon_value
from trustsim.pos import (
    PosContext,
    PriceList,
    control_exchange,
    exchange_price_list,
    make_billing_package,
    mutual_attest_session,
    purchase_via_operator,
    rotate_pos_pseudonym,
    separation_purchase,
    separation_session,
    verify_billing_package,
)
from trustsim.privacy_ca import PrivacyCa

GOODS = (("cola", 3), ("water", 2), ("juice", 4))


def pos_world(seed=7, merged=False, tampered_pos=False, plan=None):
    rng = Rng(seed)
    sim = Simulation(seed, scenario="unit-pos")
    roster = [
        ("dev-1", "device"), ("pos-1", "pos"), ("mno", "mno"),
        ("pos-owner", "pos_owner"), ("pos-pca", "pos_pca"),
        ("charging", "charging_provider"),
        ("vendor", "vendor"), ("payment", "payment_provider"),
    ]
    if not merged:
        roster.append(("auth", "auth_provider"))
    for pid, role in roster:
        sim.add_party(pid, role)
    auth_id = "mno" if merged else "auth"
    sim.add_channel("mobile", MOBILE_NETWORK, carrier="mno")
    sim.add_channel("sr", SHORT_RANGE)
    sim.add_channel("net", MOBILE_NETWORK, carrier=None)

    mfr = Manufacturer(rng)
    device_pca = PrivacyCa("device-pca", rng, {mfr.root.public}, domain_id="operator-domain")
    pos_pca = PrivacyCa("pos-pca", rng, {mfr.root.public}, domain_id="pos-domain")
    mno = MobileNetworkOperator("mno", rng)

    device = TrustedDevice.provision("dev-1", rng.fork("dev-1"), mfr,
                                     chain=standard_chain((("wallet-app", b"wallet-v1"),)),
                                     identity="imsi-7001")
    apply_setup_attacks(device, plan)
    device.boot()
    pos_device = TrustedDevice.provision(
        "pos-1", rng.fork("pos-1"), mfr,
        chain=standard_chain((("pos-client", b"pos-firmware-v1"),)),
    )
    if tampered_pos:
        pos_device.tamper("pos-client", b"skimmer")
    pos_device.boot()

    device_refs = TrustedDevice.provision("ref-d", rng.fork("ref-d"), mfr,
                                          chain=standard_chain((("wallet-app", b"wallet-v1"),))
                                          ).reference_db()
    pos_refs = TrustedDevice.provision("ref-p", rng.fork("ref-p"), mfr,
                                       chain=standard_chain((("pos-client", b"pos-firmware-v1"),))
                                       ).reference_db()

    credential = mno.issue_credential("imsi-7001")
    network_access_flow(sim, device, "mno", mno, credential)
    enroll_flow(sim, device, auth_id, device_pca, batch_size=10, channel="mobile")
    enroll_flow(sim, pos_device, "pos-pca", pos_pca, batch_size=10, channel="net")

    ctx = PosContext(
        device=device,
        pos=pos_device,
        device_id="dev-1",
        pos_id="pos-1",
        mno_id="mno",
        pos_owner_id="pos-owner",
        charging_id="charging",
        auth_id=auth_id,
        vendor_id="vendor",
        payment_id="payment",
        pos_verifier_for_device=Verifier("pos-1", device_pca.root.public, device_refs,
                                         rng.fork("v-pos")),
        device_verifier_for_pos=Verifier("dev-1", pos_pca.root.public, pos_refs,
                                         rng.fork("v-dev")),
        auth_verifier=Verifier(auth_id, device_pca.root.public, device_refs,
                               rng.fork("v-auth")),
        mno_keys=mno.keys,
        pos_owner_keys=crypto.keygen(rng.fork("owner-keys")),
        charging_keys=crypto.keygen(rng.fork("charging-keys")),
        pos_delegate_keys=crypto.keygen(rng.fork("delegate-keys")),
        device_credential=credential,
    )
    ctx.price_list = PriceList.build(GOODS, ctx.pos_owner_keys)
    return sim, ctx


def test_mutual_attest_session_happy_path():
    sim, ctx = pos_world()
    session = mutual_attest_session(sim, ctx)
    assert session == "session-1"
    verdicts = sim.events("attestation-verdict")
    assert len(verdicts) == 2 and all(v["accepted"] for v in verdicts)
    # each side learned only the other's pseudonymous token, no identities
    assert sim.knowledge_query("pos-1", "identity") == set()


def test_tampered_pos_firmware_aborts_session():
    sim, ctx = pos_world(tampered_pos=True)
    assert mutual_attest_session(sim, ctx) is None
    aborts = sim.events("abort")
    assert aborts and aborts[-1]["code"] == "session-attestation-failed"
    rejected = [e for e in sim.events("attestation-verdict") if not e["accepted"]]
    assert rejected and "reference-mismatch" in rejected[0]["reasons"]
    assert sim.events("delivery") == []


def test_operator_purchase_happy_sequence():
    sim, ctx = pos_world()
    assert mutual_attest_session(sim, ctx) is not None
    assert exchange_price_list(sim, ctx)
    order = purchase_via_operator(sim, ctx, "cola")
    assert order == "order-1"
    types = [m["type"] for m in sim.messages()]
    expected_tail = ["price-list", "purchase-order", "vendor-notify", "payment-notify",
                     "purchase-ack", "purchase-ack-relay", "delivery-confirmation"]
    assert [t for t in types if t in expected_tail] == expected_tail
    assert sim.events("delivery")[0]["order_id"] == "order-1"


def test_operator_purchase_encrypted_hides_good_from_operator():
    sim, ctx = pos_world()
    mutual_attest_session(sim, ctx)
    exchange_price_list(sim, ctx)
    purchase_via_operator(sim, ctx, "cola", encrypted=True)
    assert sim.knowledge_query("mno", "good") == set()
    assert canon_value("cola") in sim.knowledge_query("vendor", "good")


def test_operator_purchase_plaintext_reveals_good_to_operator():
    sim, ctx = pos_world()
    mutual_attest_session(sim, ctx)
    exchange_price_list(sim, ctx)
    purchase_via_operator(sim, ctx, "cola", encrypted=False)
    assert canon_value("cola") in sim.knowledge_query("mno", "good")


def test_stripped_ack_signature_blocks_delivery():
    sim, ctx = pos_world()
    mutual_attest_session(sim, ctx)
    exchange_price_list(sim, ctx)

    def corrupt(message):
        if message.msg_type == "purchase-ack-relay":
            payload = dict(message.payload)
            payload["signature"] = "00" * 64
            return dataclasses.replace(message, payload=payload)
        return None

    sim.add_hook(corrupt)
    assert purchase_via_operator(sim, ctx, "cola") is None
    assert sim.events("delivery") == []
    assert sim.events("abort")[-1]["code"] == "bad-ack-signature"


def test_pos_identity_check_via_operator_reveals_pos_to_it():
    sim, ctx = pos_world()
    mutual_attest_session(sim, ctx)
    exchange_price_list(sim, ctx)
    assert sim.knowledge_query("mno", "token") == set()
    purchase_via_operator(sim, ctx, "cola", check_pos_via_mno=True)
    assert sim.knowledge_query("mno", "token") != set()


def test_separation_purchase_centralised_privacy():
    sim, ctx = pos_world()
    out = separation_session(sim, ctx)
    assert out is not None
    session, token_fp, _ = out
    assert exchange_price_list(sim, ctx)
    order = separation_purchase(sim, ctx, "cola", token_fp)
    assert order is not None
    # charging provider: token and total only, no goods, no price list
    assert sim.knowledge_query("charging", "good") == set()
    assert canon_value(token_fp) in sim.knowledge_query("charging", "token")
    prices = sim.knowledge_query("charging", "price")
    assert prices == {canon_value(3)}
    # POS owner: no customer identity, but its own sale data
    assert sim.knowledge_query("pos-owner", "identity") == set()
    assert canon_value("cola") in sim.knowledge_query("pos-owner", "good")


def test_separation_purchase_decentralised_same_privacy():
    sim, ctx = pos_world()
    out = separation_session(sim, ctx, validate_direct=True)
    assert out is not None
    _, token_fp, _ = out
    exchange_price_list(sim, ctx)
    order = separation_purchase(sim, ctx, "water", token_fp, decentralised=True)
    assert order is not None
    assert sim.knowledge_query("charging", "good") == set()
    assert sim.knowledge_query("pos-owner", "identity") == set()
    assert sim.events("delivery")[-1]["order_id"] == order
    # the relaying device never reads the backhaul interiors
    assert sim.knowledge_query("dev-1", "token", fname="auth_token") == set()


def test_reused_token_rejected_at_validation():
    sim, ctx = pos_world()
    first = separation_session(sim, ctx)
    assert first is not None
    _, token_fp, response_payload = first
    exchange_price_list(sim, ctx)
    assert separation_purchase(sim, ctx, "cola", token_fp) is not None

    replayed = separation_session(sim, ctx, reuse_response=response_payload)
    assert replayed is None
    assert sim.events("abort")[-1]["code"] == "token-rejected"
    last = [e for e in sim.events("attestation-verdict") if not e["accepted"]][-1]
    assert "aik-reused" in last["reasons"]
    assert len(sim.events("delivery")) == 1


def test_merged_operator_learns_identity_and_tokens():
    sim, ctx = pos_world(merged=True)
    out = separation_session(sim, ctx)
    assert out is not None
    _, token_fp, response_payload = out
    exchange_price_list(sim, ctx)
    separation_purchase(sim, ctx, "cola", token_fp)
    # the merged MNO/auth-provider can link subscriber identity to the
    # one-time tokens spent at the POS
    spent = response_payload["quote"]["aik_public"]
    assert sim.knowledge_query("mno", "identity") != set()
    assert any(spent in v for v in sim.knowledge_query("mno", "token"))


def test_unmerged_operator_sees_neither_tokens_nor_goods():
    sim, ctx = pos_world(merged=False)
    out = separation_session(sim, ctx)
    _, token_fp, response_payload = out
    exchange_price_list(sim, ctx)
    separation_purchase(sim, ctx, "cola", token_fp)
    control_exchange(sim, "dev-1", "pos-owner")
    spent = response_payload["quote"]["aik_public"]
    assert sim.knowledge_query("mno", "good") == set()
    assert all(spent not in v for v in sim.knowledge_query("mno", "token"))
    # carrier view: uniform encrypted envelopes, indistinguishable from the
    # control session's shape
    shapes = {(tuple(e["fields"]), e["encrypted"]) for e in sim.parties["mno"].carrier_view}
    assert shapes == {(("env",), True)}


def test_two_purchases_expose_distinct_pos_pseudonyms():
    sim, ctx = pos_world()
    for good in ("cola", "water"):
        out = separation_session(sim, ctx)
        assert out is not None
        _, token_fp, _ = out
        exchange_price_list(sim, ctx)
        assert separation_purchase(sim, ctx, good, token_fp) is not None
    device_tokens = sim.knowledge_query("dev-1", "token", fname="certificate")
    assert len(device_tokens) >= 2


def test_rotation_keeps_service_alive():
    sim, ctx = pos_world()
    fp_before = rotate_pos_pseudonym(sim, ctx)
    assert mutual_attest_session(sim, ctx) is not None
    fp_after = rotate_pos_pseudonym(sim, ctx)
    assert fp_before != fp_after


def test_expired_pos_pseudonym_aborts_session():
    sim, ctx = pos_world()
    # shrink every POS credential's window so it has lapsed by session time
    ctx.pos.wallet.credentials = [
        (record, dataclasses.replace(cert, valid_until=0))
        for record, cert in ctx.pos.wallet.credentials
    ]
    assert mutual_attest_session(sim, ctx) is None
    rejected = [e for e in sim.events("attestation-verdict") if not e["accepted"]]
    assert rejected and "cert-expired" in rejected[-1]["reasons"]


def test_device_knows_prices_from_the_price_list():
    sim, ctx = pos_world()
    mutual_attest_session(sim, ctx)
    exchange_price_list(sim, ctx)
    entries = sim.knowledge_query("dev-1", "price", fname="entries")
    assert entries and all(str(price) in next(iter(entries)) for _, price in GOODS)


def test_billing_package_shape_is_enforced():
    keys = crypto.keygen(Rng(5))
    package = make_billing_package("fp", 7, keys)
    assert set(package) == {"auth_token", "grand_total", "signature"}
    assert verify_billing_package(package, [keys.public])
    assert not verify_billing_package({**package, "extra": 1}, [keys.public])
    assert not verify_billing_package(package, [crypto.keygen(Rng(6)).public])
