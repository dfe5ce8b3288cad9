# models.py
from __future__ import annotations

from enum import Enum

from pydantic import BaseModel, Field


class DiagnosticTag(str, Enum):
    UNKNOWN_BIT = "UNKNOWN_BIT"
    AMBIGUOUS_PIP = "AMBIGUOUS_PIP"
    DANGLING_NET = "DANGLING_NET"


class Diagnostic(BaseModel):
    tag: DiagnosticTag
    message: str
    position: int | None = Field(None, description="Absolute bit position, when the finding is about one bit")

    def __str__(self) -> str:
        return f"{self.tag.value}: {self.message}"


class ReverseSummary(BaseModel):
    switch_matrices: int
    sm_types: int
    routing_invocations: int = Field(..., description="bitgen calls spent on PIP reversing")
    analytic_invocations: int = Field(..., description="Expected routing calls per the extrapolation formula")
    naive_invocations: int = Field(..., description="Calls a per-PIP enumeration of every switch matrix would need")
    logic_invocations: int = Field(0, description="bitgen calls spent on LUT, FF and slice bits")

    @property
    def savings_factor(self) -> float:
        return self.naive_invocations / max(1, self.routing_invocations)


class Counterexample(BaseModel):
    user_key: str
    plaintext: str
    expected: str = Field(..., description="AES under the user key")
    observed: str = Field(..., description="What the device produced")


class StealthReport(BaseModel):
    self_test_pass: bool
    trials: int
    decryptable: int = Field(..., description="Trials whose ciphertext decrypts to the plaintext under k_st")
    degenerate_key: bool = Field(False, description="The user key equals the self-test key")
    counterexample: Counterexample | None = None

    @property
    def decryptable_fraction(self) -> float:
        return self.decryptable / self.trials if self.trials else 0.0

    def render(self) -> str:
        lines = [
            f"SELF-TEST: {'PASS' if self.self_test_pass else 'FAIL'}",
            f"DECRYPTABLE UNDER K_ST: {self.decryptable}/{self.trials} ({self.decryptable_fraction:.2f})",
        ]
        if self.degenerate_key:
            lines.append("WARNING: user key equals self-test key; Trojan is indistinguishable")
        if self.counterexample is not None:
            cx = self.counterexample
            lines.append(
                f"DETECTABLE: k_u={cx.user_key} p={cx.plaintext} "
                f"expected={cx.expected} observed={cx.observed}"
            )
        else:
            lines.append("DETECTABLE: no counterexample found")
        return "\n".join(lines)


class CheckResult(BaseModel):
    name: str
    passed: bool
    detail: str = ""


class SelfcheckReport(BaseModel):
    checks: list[CheckResult] = []

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def render(self) -> str:
        return "\n".join(
            f"{'PASS' if c.passed else 'FAIL'} {c.name}" + (f": {c.detail}" if c.detail else "")
            for c in self.checks
        )
