"""Protocol-level failures carry a stable kebab-case code."""

from __future__ import annotations


class ProtocolError(Exception):
    """A protocol rule was violated (replay, policy mismatch, bad credential...).

    The code is part of the artifact contract; tests and scenario reports
    assert on it. Plain misuse of the API (bad index, wrong type) raises
    ValueError/IndexError instead.
    """

    def __init__(self, code: str, detail: str = ""):
        self.code = code
        self.detail = detail
        super().__init__(f"{code}: {detail}" if detail else code)
