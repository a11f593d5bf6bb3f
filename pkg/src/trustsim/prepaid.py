"""Anonymous prepaid phone: group logon via a reserved-IMSI pool, a
shielded running total, attested nonzero-balance service grants, vouchers.

The whole prepaid group is provisioned identically — shared IMSI pool and
a shared statement key sealed to the honest boot state — so members are
indistinguishable to the operator. No message in the operational protocol
carries an individual device identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import crypto
from .attestation import Verifier
from .crypto import KeyPair, Rng
from .device import TrustedDevice
from .errors import ProtocolError
from .flows import attest_flow

BALANCE_SLOT = "prepaid-balance"
KEY_SLOT = "ppc-statement-key"

_STATEMENT_TAG = b"ppc-stmt:"
_VOUCHER_TAG = b"voucher:"


@dataclass(frozen=True)
class PpImsiPool:
    """Reserved group IMSIs plus the group's statement verification key."""

    imsis: tuple
    owner: str
    statement_public: bytes


@dataclass
class PrepaidClient:
    """Device-side ppC: balance slot, sealed statement key, voucher replay store."""

    device: TrustedDevice
    tariffs: dict  # service -> cost per unit
    used_vouchers: set = field(default_factory=set)

    @staticmethod
    def provision(device: TrustedDevice, tariffs: dict, balance: int,
                  statement_private: bytes) -> "PrepaidClient":
        """Seal balance and statement key to the current (honest-boot) PCR.

        Call after an honest reference boot; a later tampered boot leaves
        both slots unreadable.
        """
        policy = {0: device.anchor.pcr_value(0)}
        device.anchor.define_slot(BALANCE_SLOT, balance, policy)
        device.anchor.define_slot(KEY_SLOT, statement_private, policy)
        return PrepaidClient(device=device, tariffs=dict(tariffs))

    def cost_of(self, service: str, units: int) -> int:
        if units <= 0:
            raise ValueError("units must be positive")
        if service not in self.tariffs:
            raise ProtocolError("unknown-service", service)
        return self.tariffs[service] * units

    def balance(self) -> int:
        return self.device.anchor.slot_read(BALANCE_SLOT)

    def sign_statement(self, service: str, units: int, cost: int, nonce: bytes) -> dict:
        """The ppC's "balance covers this" assertion, bound to the attestation
        nonce. Needs the sealed key, so it only exists on an untampered stack."""
        key_bytes = self.device.anchor.slot_read(KEY_SLOT)
        if self.device.anchor.slot_read(BALANCE_SLOT) < cost:
            raise ProtocolError("insufficient-balance")
        key = KeyPair(crypto.public_from_private(key_bytes), key_bytes)
        body = {"service": service, "units": units, "cost": cost, "nonce": nonce.hex()}
        signature = crypto.sign(key, _STATEMENT_TAG + crypto.canonical_bytes(body))
        return {**body, "signature": signature.hex()}

    def decrement(self, cost: int) -> int:
        return self.device.anchor.slot_decrement(BALANCE_SLOT, cost)

    def apply_voucher(self, voucher: dict, mno_public: bytes) -> int:
        if not verify_voucher(voucher, mno_public):
            raise ProtocolError("voucher-invalid")
        if voucher["voucher_id"] in self.used_vouchers:
            raise ProtocolError("voucher-replay", voucher["voucher_id"])
        self.used_vouchers.add(voucher["voucher_id"])
        return self.device.anchor.slot_credit(BALANCE_SLOT, voucher["value"])


def verify_statement(statement: dict, statement_public: bytes, nonce: bytes) -> bool:
    body = {k: statement[k] for k in ("service", "units", "cost", "nonce")}
    if statement["nonce"] != nonce.hex():
        return False
    return crypto.verify(
        statement_public,
        _STATEMENT_TAG + crypto.canonical_bytes(body),
        bytes.fromhex(statement["signature"]),
    )


def make_voucher(mno_keys: KeyPair, voucher_id: str, value: int) -> dict:
    body = {"voucher_id": voucher_id, "value": value}
    signature = crypto.sign(mno_keys, _VOUCHER_TAG + crypto.canonical_bytes(body))
    return {**body, "signature": signature.hex()}


def verify_voucher(voucher: dict, mno_public: bytes) -> bool:
    body = {"voucher_id": voucher["voucher_id"], "value": voucher["value"]}
    return crypto.verify(
        mno_public, _VOUCHER_TAG + crypto.canonical_bytes(body),
        bytes.fromhex(voucher["signature"]),
    )


# -- recorded flows ------------------------------------------------------------


class PrepaidOperator:
    """MNO-side prepaid state: active pool sessions, nothing per-device."""

    def __init__(self, pool: PpImsiPool):
        self.pool = pool
        self.active = set()  # imsis with a live session
        self._session_counter = 0

    def logon(self, imsi: str):
        if imsi not in self.pool.imsis:
            raise ProtocolError("unknown-identity", imsi)
        if imsi in self.active:
            raise ProtocolError("imsi-busy", imsi)
        self.active.add(imsi)
        self._session_counter += 1
        return f"ppsess-{self._session_counter}"


def vsim_logon(sim, client: PrepaidClient, mno_id: str, operator: PrepaidOperator,
               rng: Rng, channel: str = "mobile"):
    """Random pool IMSI, retrying busy ones — at most pool-size attempts."""
    device_id = client.device.device_id
    for imsi in rng.shuffled(operator.pool.imsis):
        sim.send(device_id, mno_id, channel, "vsim-logon",
                 {"imsi": imsi}, {"imsi": "identity"})
        try:
            session_id = operator.logon(imsi)
        except ProtocolError as err:
            sim.send(mno_id, device_id, channel, "vsim-logon-conflict",
                     {"imsi": imsi, "code": err.code},
                     {"imsi": "identity", "code": "plumbing"})
            continue
        sim.send(mno_id, device_id, channel, "vsim-session",
                 {"imsi": imsi, "session_id": session_id},
                 {"imsi": "identity", "session_id": "plumbing"})
        sim.event("vsim-session", device=device_id, imsi=imsi, session=session_id)
        return imsi, session_id
    sim.event("abort", party=device_id, code="pool-exhausted")
    return None


def prepaid_service_request(
    sim,
    client: PrepaidClient,
    mno_id: str,
    operator: PrepaidOperator,
    verifier: Verifier,
    service: str,
    units: int,
    plan=None,
    replenish_via=None,
    channel: str = "mobile",
):
    """Attested service grant: quote + balance statement, decrement on accept.

    Returns the granted cost, or None on any denial (no decrement happens)."""
    device_id = client.device.device_id
    cost = client.cost_of(service, units)
    sim.send(device_id, mno_id, channel, "service-request",
             {"service": service, "units": units},
             {"service": "good", "units": "plumbing"})

    verdict = attest_flow(sim, client.device, mno_id, verifier, channel,
                          plan=plan, replenish_via=replenish_via)

    def deny(code):
        sim.send(mno_id, device_id, channel, "service-denied",
                 {"service": service, "code": code},
                 {"service": "good", "code": "plumbing"})
        sim.event("denial", device=device_id, service=service, code=code)
        return None

    if verdict is None:
        return deny("attestation-lost")
    if not verdict.accepted:
        return deny(verdict.reasons[0])

    nonce = bytes.fromhex(sim.messages("attestation-challenge")[-1]["payload"]["nonce"])
    try:
        statement = client.sign_statement(service, units, cost, nonce)
    except ProtocolError as err:
        sim.send(device_id, mno_id, channel, "statement-refused",
                 {"service": service, "code": err.code},
                 {"service": "good", "code": "plumbing"})
        return deny(err.code)

    sim.send(device_id, mno_id, channel, "balance-statement",
             {"statement": statement}, {"statement": "balance"})
    if not verify_statement(statement, operator.pool.statement_public, nonce):
        return deny("bad-statement")

    sim.send(mno_id, device_id, channel, "service-accept",
             {"service": service, "cost": cost},
             {"service": "good", "cost": "price"})
    remaining = client.decrement(cost)
    sim.event("decrement", device=device_id, amount=cost, balance=remaining)
    sim.send(device_id, mno_id, channel, "service-consumed",
             {"service": service}, {"service": "good"})
    sim.event("grant", device=device_id, service=service, cost=cost)
    sim.send(mno_id, device_id, channel, "service-granted",
             {"service": service, "units": units},
             {"service": "good", "units": "plumbing"})
    return cost


def top_up_flow(sim, client: PrepaidClient, mno_id: str, mno_keys: KeyPair,
                voucher: dict, channel: str = "mobile"):
    """Deliver a voucher and apply it; replays and forgeries are rejected."""
    device_id = client.device.device_id
    sim.send(mno_id, device_id, channel, "voucher",
             {"voucher": voucher}, {"voucher": "balance"})
    try:
        balance = client.apply_voucher(voucher, mno_keys.public)
    except ProtocolError as err:
        sim.event("top-up", device=device_id, voucher_id=voucher["voucher_id"],
                  value=voucher["value"], accepted=False, code=err.code)
        return None
    sim.event("top-up", device=device_id, voucher_id=voucher["voucher_id"],
              value=voucher["value"], accepted=True)
    return balance
