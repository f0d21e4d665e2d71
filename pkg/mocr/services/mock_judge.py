# mocr/services/mock_judge.py
"""Deterministic judge for tests and smoke runs. No network, no randomness."""
from __future__ import annotations

import json
from typing import Callable, List

from mocr.errors import ConfigError, TransportError
from mocr.prompting import JudgeRequest, JudgeResponse, parse_verdict_details

Respond = Callable[[JudgeRequest], str]

POLICIES = ("tie", "first", "second", "marker:<TEXT>", "fail")


def _answer(winner: str, reason: str) -> str:
    return json.dumps({"winner": winner, "reason": reason})


def _marker(text: str) -> Respond:
    def respond(request: JudgeRequest) -> str:
        in_first, in_second = text in request.first, text in request.second
        if in_first and not in_second:
            return _answer("first", f"only candidate 1 contains {text}")
        if in_second and not in_first:
            return _answer("second", f"only candidate 2 contains {text}")
        return _answer("tie", f"{text} decides nothing here")
    return respond


def _fail(request: JudgeRequest) -> str:
    raise TransportError("mock judge configured to fail")


class MockJudge:
    """Runs `respond` for every trial and parses its text like a real judge reply."""

    def __init__(self, respond: Respond, name: str = "mock") -> None:
        self.respond = respond
        self.name = name
        self.calls: List[JudgeRequest] = []

    @classmethod
    def from_policy(cls, policy: str) -> "MockJudge":
        if policy == "tie":
            return cls(lambda r: _answer("tie", "indistinguishable"), "mock:tie")
        if policy == "first":
            return cls(lambda r: _answer("first", "first one"), "mock:first")
        if policy == "second":
            return cls(lambda r: _answer("second", "second one"), "mock:second")
        if policy == "fail":
            return cls(_fail, "mock:fail")
        if policy.startswith("marker:") and len(policy) > len("marker:"):
            return cls(_marker(policy[len("marker:"):]), f"mock:{policy}")
        raise ConfigError(f"unknown mock judge policy '{policy}' (choose from {', '.join(POLICIES)})")

    async def judge(self, request: JudgeRequest) -> JudgeResponse:
        self.calls.append(request)
        raw = self.respond(request)
        verdict, reason = parse_verdict_details(raw)
        return JudgeResponse(raw=raw, verdict=verdict, explanation=reason, attempts=1)

    async def aclose(self) -> None:
        return None
