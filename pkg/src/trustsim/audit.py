"""Independent replay auditor for finalized transcripts.

Re-derives every party's knowledge set and carrier view from the raw
serialized records — on purpose without calling the harness — and checks
the transcript-level invariants: knowledge soundness, channel separation,
one-time AIK acceptance, counter conservation, delivery/grant ordering,
and billing-package field exactness. This is the second route of the
dual-route privacy checks and the engine behind `trustsim verify`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

DEFAULT_FRESHNESS_WINDOW = 100

BILLING_PACKAGE_FIELDS = {"auth_token", "grand_total", "signature"}


@dataclass(frozen=True)
class Finding:
    name: str
    ok: bool
    detail: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "ok": self.ok, "detail": self.detail}


def _canon(value) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


def _replay_observations(transcript):
    """Walk the message records and rebuild who could read what."""
    channels = transcript.header.get("channels", {})
    knowledge = {pid: set() for pid in transcript.snapshot.get("knowledge", {})}
    carrier_views = {pid: [] for pid in knowledge}

    def absorb(party, payload, labels):
        for fname, value in payload.items():
            if isinstance(value, dict) and set(value) == {"_sealed"}:
                sealed = value["_sealed"]
                if party in sealed["readers"]:
                    absorb(party, sealed["payload"], sealed["labels"])
                continue
            knowledge.setdefault(party, set()).add((fname, labels[fname], _canon(value)))

    for record in transcript.records:
        if record["kind"] != "message":
            continue
        absorb(record["receiver"], record["payload"], record["labels"])
        ch = channels.get(record["channel"], {})
        carrier = ch.get("carrier")
        if (
            ch.get("kind") == "mobile_network"
            and carrier
            and carrier not in (record["sender"], record["receiver"])
        ):
            carrier_views.setdefault(carrier, []).append(
                {
                    "tick": record["tick"],
                    "channel": record["channel"],
                    "fields": sorted(record["payload"]),
                    "encrypted": record["encrypted"],
                }
            )
            if not record["encrypted"]:
                absorb(carrier, record["payload"], record["labels"])

    return knowledge, carrier_views


def check_knowledge_soundness(transcript) -> Finding:
    """Snapshot knowledge == what the raw messages actually exposed."""
    knowledge, carrier_views = _replay_observations(transcript)
    snapshot_knowledge = {
        pid: {tuple(row) for row in rows}
        for pid, rows in transcript.snapshot.get("knowledge", {}).items()
    }
    for pid in set(knowledge) | set(snapshot_knowledge):
        derived = knowledge.get(pid, set())
        recorded = snapshot_knowledge.get(pid, set())
        if derived != recorded:
            extra = recorded - derived
            missing = derived - recorded
            return Finding(
                "knowledge-soundness",
                False,
                f"party {pid}: {len(extra)} unexplained, {len(missing)} missing entries",
            )
    snapshot_views = transcript.snapshot.get("carrier_views", {})
    derived_views = {pid: view for pid, view in carrier_views.items() if view}
    if snapshot_views != derived_views:
        return Finding("knowledge-soundness", False, "carrier views do not replay")
    return Finding("knowledge-soundness", True)


def check_channel_separation(transcript) -> Finding:
    """No short-range message ever shows up in a carrier's metadata view."""
    channels = transcript.header.get("channels", {})
    short_range = {n for n, c in channels.items() if c.get("kind") == "short_range"}
    for pid, view in transcript.snapshot.get("carrier_views", {}).items():
        for entry in view:
            if entry["channel"] in short_range:
                return Finding(
                    "channel-separation",
                    False,
                    f"carrier {pid} observed short-range traffic at tick {entry['tick']}",
                )
    return Finding("channel-separation", True)


def check_one_time_aik(transcript) -> Finding:
    """No verifier accepts the same AIK fingerprint twice."""
    accepted = {}
    for event in transcript.events("attestation-verdict"):
        if not event["accepted"]:
            continue
        key = (event["verifier"], event["aik_fp"])
        accepted[key] = accepted.get(key, 0) + 1
    reused = [k for k, n in accepted.items() if n > 1]
    if reused:
        verifier, fp = reused[0]
        return Finding(
            "one-time-aik", False, f"verifier {verifier} accepted {fp[:12]}... twice"
        )
    return Finding("one-time-aik", True, f"{len(accepted)} accepted attestations")


def check_counter_conservation(transcript) -> Finding:
    """final balance = initial + vouchers credited - granted costs, per device."""
    balances = transcript.snapshot.get("summary", {}).get("balances")
    if balances is None:
        return Finding("counter-conservation", True, "not-applicable")
    initial = {e["device"]: e["value"] for e in transcript.events("balance-init")}
    credits = {}
    for e in transcript.events("top-up"):
        if e["accepted"]:
            credits[e["device"]] = credits.get(e["device"], 0) + e["value"]
    costs = {}
    for e in transcript.events("grant"):
        costs[e["device"]] = costs.get(e["device"], 0) + e["cost"]
    for device, final in balances.items():
        expected = initial.get(device, 0) + credits.get(device, 0) - costs.get(device, 0)
        if final != expected:
            return Finding(
                "counter-conservation",
                False,
                f"{device}: final {final} != {expected}",
            )
        if final < 0:
            return Finding("counter-conservation", False, f"{device}: negative balance")
    return Finding("counter-conservation", True)


def check_no_delivery_without_confirmation(transcript) -> Finding:
    verified = {}
    for event in transcript.events("ack-verified"):
        verified.setdefault(event["order_id"], event["tick"])
    for event in transcript.events("delivery"):
        order = event["order_id"]
        if order not in verified or verified[order] > event["tick"]:
            return Finding(
                "no-delivery-without-confirmation",
                False,
                f"delivery of {order} lacks a prior verified acknowledgement",
            )
    return Finding("no-delivery-without-confirmation", True)


def _sealed_interior(value):
    if isinstance(value, dict) and set(value) == {"_sealed"}:
        return value["_sealed"]["payload"]
    return None


def check_billing_package_exactness(transcript) -> Finding:
    """Structural exactness wherever a billing package appears: a message of
    that type (possibly one sealed hop) and any payload dict carrying a
    grand total must hold exactly {auth_token, grand_total, signature}."""

    def field_sets(value):
        if isinstance(value, dict):
            interior = _sealed_interior(value)
            if interior is not None:
                yield from field_sets(interior)
                return
            if "grand_total" in value:
                yield set(value)
            for nested in value.values():
                yield from field_sets(nested)
        elif isinstance(value, list):
            for nested in value:
                yield from field_sets(nested)

    for record in transcript.records:
        if record["kind"] != "message":
            continue
        if record["type"] == "billing-package":
            payload = record["payload"]
            interior = len(payload) == 1 and _sealed_interior(next(iter(payload.values())))
            fields = set(interior) if interior else set(payload)
            if fields != BILLING_PACKAGE_FIELDS:
                return Finding(
                    "billing-package-exactness",
                    False,
                    f"message {record['id']} has fields {sorted(fields)}",
                )
        for fields in field_sets(record["payload"]):
            if fields != BILLING_PACKAGE_FIELDS:
                return Finding(
                    "billing-package-exactness",
                    False,
                    f"message {record['id']} embeds a package with fields {sorted(fields)}",
                )
    return Finding("billing-package-exactness", True)


def check_no_grant_without_attestation(transcript) -> Finding:
    window = transcript.snapshot.get("summary", {}).get(
        "freshness_window", DEFAULT_FRESHNESS_WINDOW
    )
    verdicts = transcript.events("attestation-verdict")
    for grant in transcript.events("grant"):
        ok = [
            v
            for v in verdicts
            if v["subject"] == grant["device"]
            and v["accepted"]
            and v["tick"] <= grant["tick"] <= v["tick"] + window
        ]
        if not ok:
            return Finding(
                "no-grant-without-attestation",
                False,
                f"grant to {grant['device']} at tick {grant['tick']} has no fresh accepted attestation",
            )
    return Finding("no-grant-without-attestation", True)


def check_gate_logging(transcript) -> Finding:
    verdicts = transcript.events("attestation-verdict")
    for entry in transcript.events("entry"):
        if not entry["granted"]:
            continue
        ok = [
            v
            for v in verdicts
            if v["subject"] == entry["device"] and v["accepted"] and v["tick"] <= entry["tick"]
        ]
        if not ok:
            return Finding(
                "gate-logging",
                False,
                f"entry of {entry['device']} at tick {entry['tick']} lacks an attestation verdict",
            )
    return Finding("gate-logging", True)


INVARIANT_CHECKS = (
    ("knowledge-soundness", check_knowledge_soundness),
    ("channel-separation", check_channel_separation),
    ("one-time-aik", check_one_time_aik),
    ("counter-conservation", check_counter_conservation),
    ("no-delivery-without-confirmation", check_no_delivery_without_confirmation),
    ("billing-package-exactness", check_billing_package_exactness),
    ("no-grant-without-attestation", check_no_grant_without_attestation),
    ("gate-logging", check_gate_logging),
)


def audit(transcript) -> list:
    """Run every transcript invariant; returns the findings in fixed order.

    A record so malformed that a check cannot even run (a payload field
    with no label, a missing event key) fails that check rather than
    raising: hand-edited files must come back as findings."""
    findings = []
    for name, check in INVARIANT_CHECKS:
        try:
            findings.append(check(transcript))
        except Exception as err:
            findings.append(Finding(name, False, f"malformed transcript: {err!r}"))
    return findings
