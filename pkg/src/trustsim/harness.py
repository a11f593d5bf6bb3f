"""Deterministic run harness: channels, message delivery, knowledge tracking.

A run is a single-threaded sequence of delivered messages; time is an
integer tick that advances once per delivery. Every payload field carries
a sensitivity label from a fixed taxonomy, and each party's knowledge set
records exactly the labeled values it could read — the substrate for all
privacy assertions. Transcripts serialize to line-delimited JSON with
stable ordering so identical (scenario, seed) pairs produce identical
bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .crypto import Rng

TRANSCRIPT_SCHEMA = "trustsim-transcript/1"

MOBILE_NETWORK = "mobile_network"
SHORT_RANGE = "short_range"

# The fixed label taxonomy; scenario code may not invent labels.
LABELS = frozenset(
    {"identity", "good", "price", "token", "balance", "policy", "plumbing"}
)

DROP = "drop"


def canon_value(value) -> str:
    """Canonical JSON string for one payload value (knowledge-set element)."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class Envelope:
    """Payload sealed end-to-end for specific readers.

    Carried opaquely by everyone else: relays and carriers learn that a
    sealed blob passed, never the fields inside.
    """

    readers: frozenset
    payload: dict
    labels: dict

    def to_json(self) -> dict:
        return {
            "_sealed": {
                "readers": sorted(self.readers),
                "payload": self.payload,
                "labels": self.labels,
            }
        }


def seal(readers, payload: dict, labels: dict) -> dict:
    _check_labels(payload, labels)
    return Envelope(frozenset(readers), dict(payload), dict(labels)).to_json()


def is_sealed(value) -> bool:
    return isinstance(value, dict) and set(value) == {"_sealed"}


def _check_labels(payload: dict, labels: dict) -> None:
    missing = set(payload) - set(labels)
    if missing:
        raise ValueError(f"unlabeled payload fields: {sorted(missing)}")
    unknown = set(labels.values()) - LABELS
    if unknown:
        raise ValueError(f"labels outside the fixed taxonomy: {sorted(unknown)}")
    for fname, value in payload.items():
        if is_sealed(value):
            inner = value["_sealed"]
            _check_labels(inner["payload"], inner["labels"])


@dataclass(frozen=True)
class Channel:
    name: str
    kind: str  # MOBILE_NETWORK or SHORT_RANGE
    carrier: str | None = None  # party id observing mobile_network traffic


@dataclass(frozen=True)
class Message:
    msg_id: str
    tick: int
    sender: str
    receiver: str
    channel: str
    msg_type: str
    payload: dict
    labels: dict
    encrypted: bool

    def record(self) -> dict:
        return {
            "kind": "message",
            "id": self.msg_id,
            "tick": self.tick,
            "sender": self.sender,
            "receiver": self.receiver,
            "channel": self.channel,
            "type": self.msg_type,
            "encrypted": self.encrypted,
            "payload": self.payload,
            "labels": self.labels,
        }


class PartyState:
    """Per-party observation state owned by the harness."""

    def __init__(self, party_id: str, role: str):
        self.party_id = party_id
        self.role = role
        # knowledge: set of (field, label, canonical value)
        self.knowledge = set()
        # carrier-side metadata: list of shape records, in delivery order
        self.carrier_view = []

    def learn(self, fname: str, label: str, value) -> None:
        self.knowledge.add((fname, label, canon_value(value)))


class Simulation:
    """One deterministic run: registered parties, channels, transcript."""

    def __init__(self, seed: int, scenario: str = "", attacks=(), variants=None):
        self.rng = Rng(seed)
        self.seed = seed
        self.scenario = scenario
        self.attacks = tuple(attacks)
        self.variants = dict(variants or {})
        self.tick = 0
        self.parties: dict[str, PartyState] = {}
        self.channels: dict[str, Channel] = {}
        self.records = []
        self.summary = {}
        self._hooks = []
        self._msg_counter = 0

    # -- setup -------------------------------------------------------------

    def add_party(self, party_id: str, role: str) -> PartyState:
        if party_id in self.parties:
            raise ValueError(f"duplicate party id: {party_id}")
        state = PartyState(party_id, role)
        self.parties[party_id] = state
        return state

    def add_channel(self, name: str, kind: str, carrier: str | None = None) -> Channel:
        if kind not in (MOBILE_NETWORK, SHORT_RANGE):
            raise ValueError(f"unknown channel kind: {kind}")
        if kind == SHORT_RANGE and carrier is not None:
            raise ValueError("short_range channels have no carrier")
        channel = Channel(name, kind, carrier)
        self.channels[name] = channel
        return channel

    def add_hook(self, hook) -> None:
        """Attack hook: hook(message) -> None (pass) | Message | harness.DROP."""
        self._hooks.append(hook)

    # -- delivery ----------------------------------------------------------

    def send(
        self,
        sender: str,
        receiver: str,
        channel: str,
        msg_type: str,
        payload: dict,
        labels: dict,
        encrypted: bool = False,
    ):
        """Deliver one message in order; returns it, or None when an attack
        hook dropped it."""
        if sender not in self.parties or receiver not in self.parties:
            raise ValueError(f"unregistered party in {sender}->{receiver}")
        ch = self.channels.get(channel)
        if ch is None:
            raise ValueError(f"unknown channel: {channel}")
        _check_labels(payload, labels)

        self._msg_counter += 1
        message = Message(
            msg_id=f"m{self._msg_counter:05d}",
            tick=self.tick + 1,
            sender=sender,
            receiver=receiver,
            channel=channel,
            msg_type=msg_type,
            payload=dict(payload),
            labels=dict(labels),
            encrypted=encrypted,
        )

        for hook in self._hooks:
            outcome = hook(message)
            if outcome is DROP:
                self.records.append(
                    {
                        "kind": "event",
                        "tick": self.tick,
                        "event": "message-dropped",
                        "id": message.msg_id,
                        "type": message.msg_type,
                        "sender": sender,
                        "receiver": receiver,
                    }
                )
                return None
            if isinstance(outcome, Message):
                message = outcome

        self.tick += 1
        self.records.append(message.record())
        self._observe(message, ch)
        return message

    def _observe(self, message: Message, channel: Channel) -> None:
        receiver = self.parties[message.receiver]
        _absorb(receiver, message.receiver, message.payload, message.labels)

        if channel.kind != MOBILE_NETWORK or channel.carrier is None:
            return
        if channel.carrier in (message.sender, message.receiver):
            return
        carrier = self.parties[channel.carrier]
        carrier.carrier_view.append(
            {
                "tick": message.tick,
                "channel": message.channel,
                "fields": sorted(message.payload),
                "encrypted": message.encrypted,
            }
        )
        if not message.encrypted:
            _absorb(carrier, channel.carrier, message.payload, message.labels)

    # -- events and queries --------------------------------------------------

    def event(self, event_type: str, **fields) -> dict:
        record = {"kind": "event", "tick": self.tick, "event": event_type}
        record.update(fields)
        self.records.append(record)
        return record

    def events(self, event_type: str | None = None) -> list:
        return [
            r
            for r in self.records
            if r["kind"] == "event" and (event_type is None or r["event"] == event_type)
        ]

    def messages(self, msg_type: str | None = None) -> list:
        return [
            r
            for r in self.records
            if r["kind"] == "message" and (msg_type is None or r["type"] == msg_type)
        ]

    def knowledge_query(self, party: str, label: str | None = None, fname: str | None = None) -> set:
        """Exact set of canonical values with that label (or field name)
        ever readable by the party."""
        state = self.parties.get(party)
        if state is None:
            raise ValueError(f"unknown party: {party}")
        return {
            value
            for f, l, value in state.knowledge
            if (label is None or l == label) and (fname is None or f == fname)
        }

    # -- transcript --------------------------------------------------------

    def finalize(self) -> "Transcript":
        return Transcript(
            header={
                "schema": TRANSCRIPT_SCHEMA,
                "scenario": self.scenario,
                "seed": self.seed,
                "attacks": list(self.attacks),
                "variants": self.variants,
                "channels": {
                    name: {"kind": ch.kind, "carrier": ch.carrier}
                    for name, ch in sorted(self.channels.items())
                },
            },
            records=list(self.records),
            snapshot={
                "kind": "snapshot",
                "tick": self.tick,
                "knowledge": {
                    pid: sorted(list(t) for t in state.knowledge)
                    for pid, state in sorted(self.parties.items())
                },
                "carrier_views": {
                    pid: state.carrier_view
                    for pid, state in sorted(self.parties.items())
                    if state.carrier_view
                },
                "roles": {pid: s.role for pid, s in sorted(self.parties.items())},
                "summary": self.summary,
            },
        )


def _absorb(state: PartyState, party_id: str, payload: dict, labels: dict) -> None:
    """Fold readable payload fields into a party's knowledge set.

    Sealed sub-payloads open only for their listed readers, however deeply
    the envelope travelled.
    """
    for fname, value in payload.items():
        if is_sealed(value):
            inner = value["_sealed"]
            if party_id in inner["readers"]:
                _absorb(state, party_id, inner["payload"], inner["labels"])
            continue
        state.learn(fname, labels[fname], value)


@dataclass
class Transcript:
    """Finalized run record: header line, ordered records, snapshot line."""

    header: dict
    records: list
    snapshot: dict

    def to_lines(self) -> list:
        lines = [json.dumps(self.header, sort_keys=True, separators=(",", ":"))]
        lines += [
            json.dumps(r, sort_keys=True, separators=(",", ":")) for r in self.records
        ]
        lines.append(json.dumps(self.snapshot, sort_keys=True, separators=(",", ":")))
        return lines

    def to_text(self) -> str:
        return "\n".join(self.to_lines()) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def parse(cls, text: str) -> "Transcript":
        lines = [line for line in text.splitlines() if line.strip()]
        if len(lines) < 2:
            raise ValueError("transcript too short")
        header = json.loads(lines[0])
        if header.get("schema") != TRANSCRIPT_SCHEMA:
            raise ValueError(f"unknown transcript schema: {header.get('schema')!r}")
        snapshot = json.loads(lines[-1])
        if snapshot.get("kind") != "snapshot":
            raise ValueError("transcript missing snapshot line")
        records = [json.loads(line) for line in lines[1:-1]]
        return cls(header=header, records=records, snapshot=snapshot)

    @classmethod
    def read(cls, path) -> "Transcript":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.parse(fh.read())

    def knowledge_query(self, party: str, label: str | None = None, fname: str | None = None) -> set:
        rows = self.snapshot["knowledge"].get(party)
        if rows is None:
            raise ValueError(f"unknown party: {party}")
        return {
            value
            for f, l, value in (tuple(r) for r in rows)
            if (label is None or l == label) and (fname is None or f == fname)
        }

    def events(self, event_type: str | None = None) -> list:
        return [
            r
            for r in self.records
            if r["kind"] == "event" and (event_type is None or r["event"] == event_type)
        ]

    def messages(self, msg_type: str | None = None) -> list:
        return [
            r
            for r in self.records
            if r["kind"] == "message" and (msg_type is None or r["type"] == msg_type)
        ]
