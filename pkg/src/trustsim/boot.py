"""Trusted boot chain: measure, extend, log — plus attack edits.

The initial component measures itself, every later component is measured
before it runs; all measurements land in one PCR (index 0 by default) and
in an ordered log the verifier can refold.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import crypto
from .anchor import TrustAnchor
from .errors import ProtocolError

BOOT_PCR = 0


@dataclass(frozen=True)
class BootComponent:
    name: str
    payload: bytes
    stage: int


def make_chain(components) -> list:
    """Build a boot chain from (name, payload) pairs, stages in order."""
    return [
        BootComponent(name=name, payload=payload, stage=i)
        for i, (name, payload) in enumerate(components)
    ]


@dataclass(frozen=True)
class LogEntry:
    component: str
    measurement: str  # hex digest
    pcr_index: int


class MeasurementLog:
    """Append-only ordered record of boot measurements."""

    def __init__(self, entries=()):
        self.entries = list(entries)

    def append(self, component: str, measurement: bytes, pcr_index: int) -> None:
        self.entries.append(LogEntry(component, measurement.hex(), pcr_index))

    def __len__(self):
        return len(self.entries)

    def to_fields(self) -> list:
        return [
            {"component": e.component, "measurement": e.measurement, "pcr": e.pcr_index}
            for e in self.entries
        ]

    @classmethod
    def from_fields(cls, rows) -> "MeasurementLog":
        return cls(
            LogEntry(r["component"], r["measurement"], r["pcr"]) for r in rows
        )


class ReferenceDb:
    """Verifier-side expected measurements; never consulted by the device."""

    def __init__(self):
        self._expected = {}

    def register(self, name: str, measurement: bytes) -> None:
        self._expected[name] = measurement.hex()

    def register_chain(self, chain) -> None:
        for component in chain:
            self.register(component.name, crypto.hash160(component.payload))

    def lookup(self, name: str):
        return self._expected.get(name)

    def matches(self, name: str, measurement_hex: str) -> bool:
        return self._expected.get(name) == measurement_hex


def boot(anchor: TrustAnchor, chain, pcr_index: int = BOOT_PCR,
         stage_pcrs: dict | None = None) -> MeasurementLog:
    """Run the measured boot: hash each component, extend, log, in order.

    One register accumulates the whole chain by default; stage_pcrs maps
    component names to other registers for per-stage assignment."""
    if not chain:
        raise ValueError("boot chain must not be empty")
    stage_pcrs = stage_pcrs or {}
    for register in {stage_pcrs.get(c.name, pcr_index) for c in chain}:
        if anchor.pcr_value(register) != crypto.ZERO_DIGEST:
            raise ProtocolError("pcr-not-reset", f"register {register} already extended")
    log = MeasurementLog()
    for component in chain:
        register = stage_pcrs.get(component.name, pcr_index)
        measurement = crypto.hash160(component.payload)
        anchor.extend(register, measurement)
        log.append(component.name, measurement, register)
    return log


def tamper(chain, component_name: str, new_payload: bytes) -> list:
    """Replace one component's payload (pre-boot attack); returns a new chain."""
    if component_name not in {c.name for c in chain}:
        raise ProtocolError("unknown-component", component_name)
    return [
        BootComponent(c.name, new_payload, c.stage) if c.name == component_name else c
        for c in chain
    ]


def forge_log(log: MeasurementLog, entry_index: int, fake_digest: bytes) -> MeasurementLog:
    """Rewrite one log entry (post-boot attack); the PCR is untouched."""
    if not 0 <= entry_index < len(log.entries):
        raise IndexError(f"log entry {entry_index} out of range")
    entries = list(log.entries)
    old = entries[entry_index]
    entries[entry_index] = LogEntry(old.component, fake_digest.hex(), old.pcr_index)
    return MeasurementLog(entries)
