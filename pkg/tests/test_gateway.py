import math

import pytest

from vulrtex.errors import (
    BackendRejected,
    GatewayExhausted,
    LogprobsUnavailable,
    NoLabelToken,
    TransportError,
)
from vulrtex.gateway import (
    Gateway,
    LlmRequest,
    LlmResponse,
    StubBackend,
    StubRule,
    yes_probability,
)


def make_request(prompt: str, want_logprobs: bool = False, seed: int | None = None) -> LlmRequest:
    return LlmRequest(system_prompt="system", user_prompt=prompt,
                      want_logprobs=want_logprobs, seed=seed)


RULES = [
    StubRule(r"Output exactly: (.+)", r"\1"),
    StubRule(r"classify this", "Yes\nCWE-79",
             {"Yes": math.log(0.9), "No": math.log(0.1)}),
]


def test_stub_echo_rule():
    backend = StubBackend(RULES)
    assert backend.complete(make_request("Output exactly: PING")).text == "PING"


def test_stub_deterministic_across_calls():
    backend = StubBackend(RULES)
    req = make_request("classify this report", want_logprobs=True, seed=7)
    a = backend.complete(req)
    b = backend.complete(req)
    assert a.text == b.text
    assert a.top_token_logprobs == b.top_token_logprobs


def test_stub_no_match_rejected():
    with pytest.raises(BackendRejected):
        StubBackend(RULES).complete(make_request("nothing applies"))


def test_stub_logprobs_unavailable_when_rule_has_none():
    with pytest.raises(LogprobsUnavailable):
        StubBackend(RULES).complete(make_request("Output exactly: PING", want_logprobs=True))


def test_stub_jitter_deterministic_but_seed_sensitive():
    backend = StubBackend(RULES, jitter=0.05)
    r7a = backend.complete(make_request("classify this", want_logprobs=True, seed=7))
    r7b = backend.complete(make_request("classify this", want_logprobs=True, seed=7))
    r8 = backend.complete(make_request("classify this", want_logprobs=True, seed=8))
    assert r7a.top_token_logprobs == r7b.top_token_logprobs
    assert r7a.top_token_logprobs != r8.top_token_logprobs


def test_yes_probability_equal_logprobs_is_half():
    resp = LlmResponse("Yes", [{"Yes": -1.3, "No": -1.3}], "stub")
    assert yes_probability(resp) == pytest.approx(0.5, abs=1e-12)


def test_yes_probability_renormalizes():
    resp = LlmResponse("Yes", [{"Yes": math.log(0.9), "No": math.log(0.1)}], "stub")
    assert yes_probability(resp) == pytest.approx(0.9, abs=1e-9)


def test_yes_probability_case_and_space_variants():
    resp = LlmResponse("yes", [{" Yes": math.log(0.6), "no": math.log(0.4)}], "stub")
    assert yes_probability(resp) == pytest.approx(0.6, abs=1e-9)


def test_yes_probability_single_label_fallback():
    lp_min = math.log(0.001)
    resp = LlmResponse("Yes", [{"Yes": math.log(0.9), "Hmm": lp_min}], "stub")
    expected = 0.9 / (0.9 + 0.001)
    assert yes_probability(resp) == pytest.approx(expected, abs=1e-9)


def test_yes_probability_shift_invariant():
    base = {"Yes": math.log(0.7), "No": math.log(0.3)}
    p0 = yes_probability(LlmResponse("Yes", [base], "stub"))
    for shift in (-50.0, -3.2, 0.1, 17.0):
        shifted = {t: lp + shift for t, lp in base.items()}
        p = yes_probability(LlmResponse("Yes", [shifted], "stub"))
        assert p == pytest.approx(p0, abs=1e-9)


def test_yes_probability_no_label_token():
    with pytest.raises(NoLabelToken):
        yes_probability(LlmResponse("Maybe", [{"Maybe": -0.1}], "stub"))
    with pytest.raises(NoLabelToken):
        yes_probability(LlmResponse("x", None, "stub"))
    with pytest.raises(NoLabelToken):
        yes_probability(LlmResponse("x", [{}], "stub"))


class FlakyBackend:
    name = "flaky"

    def __init__(self, failures: int):
        self.failures = failures
        self.calls = 0

    def complete(self, req):
        self.calls += 1
        if self.calls <= self.failures:
            raise TransportError("transient")
        return LlmResponse("ok", None, self.name)


def test_gateway_retries_transient_failures():
    backend = FlakyBackend(failures=2)
    gw = Gateway(backend, max_retries=3, backoff_base=0.0)
    assert gw.complete(make_request("hi")).text == "ok"
    assert backend.calls == 3


def test_gateway_exhausts_after_retries():
    backend = FlakyBackend(failures=10)
    gw = Gateway(backend, max_retries=2, backoff_base=0.0)
    with pytest.raises(GatewayExhausted):
        gw.complete(make_request("hi"))
    assert backend.calls == 3


def test_gateway_does_not_retry_rejections():
    backend = StubBackend(RULES)
    gw = Gateway(backend, max_retries=5, backoff_base=0.0)
    with pytest.raises(BackendRejected):
        gw.complete(make_request("nothing applies"))
    assert gw.calls == 1


def test_stub_rules_load_from_file(tmp_path):
    path = tmp_path / "rules.jsonl"
    path.write_text(
        '{"pattern": "ping", "response_text": "pong"}\n'
        '\n'
        '{"pattern": "label", "response_text": "Yes", '
        '"first_token_logprobs": {"Yes": -0.1, "No": -2.3}}\n',
        encoding="utf-8")
    backend = StubBackend.from_file(path)
    assert backend.complete(make_request("ping")).text == "pong"
    resp = backend.complete(make_request("label", want_logprobs=True))
    assert resp.top_token_logprobs == [{"Yes": -0.1, "No": -2.3}]
