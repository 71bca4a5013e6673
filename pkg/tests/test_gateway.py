from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import tabdistill as td
from tabdistill.errors import ConfigError, GatewayError, ScriptError
from tabdistill.gateway import (
    NO_ANSWER,
    PREDICTOR,
    SUMMARIZER,
    CompletionRequest,
    CompletionResponse,
    Gateway,
    LiveClient,
    ScriptedClient,
    ScriptedPolicy,
    UsageLedger,
    cache_key,
    parse_answer,
    parse_query_features,
    tally,
)
from tabdistill.serialize import PromptText, render_classification_prompt

from test_serialize import BLOOD_TASK, blood_row_text


def make_request(text="Will it rain?", model="m1", temperature=0.0, role=PREDICTOR):
    return CompletionRequest(
        prompt=PromptText.of(text, "classify"),
        model_name=model,
        role=role,
        temperature=temperature,
    )


def blood_query_prompt(recency=3.0):
    return render_classification_prompt(
        BLOOD_TASK, "", None, [], blood_row_text((recency, 5.0, 1250.0, 38.0))
    )


# --- parse_answer -------------------------------------------------------------


def test_parse_answer_direct():
    assert parse_answer("Answer: Yes", ("Yes", "No")) == "Yes"
    assert parse_answer("no", ("Yes", "No")) == "No"


def test_parse_answer_longest_choice_wins():
    car = ("Unacceptable", "Acceptable", "Good", "Very Good")
    assert parse_answer("it is very good overall", car) == "Very Good"
    assert parse_answer("Unacceptable.", car) == "Unacceptable"
    # "acceptable" inside "unacceptable" is not a whole word
    assert parse_answer("that would be unacceptable", car) == "Unacceptable"


def test_parse_answer_no_match():
    assert parse_answer("I cannot determine this.", ("Yes", "No")) is NO_ANSWER
    assert parse_answer("", ("Yes", "No")) is NO_ANSWER
    assert parse_answer("yesterday", ("Yes", "No")) is NO_ANSWER  # whole words only


def test_parse_answer_reading_order():
    assert parse_answer("No, wait: Yes", ("Yes", "No")) == "No"


@given(st.text(max_size=300))
@settings(max_examples=150, deadline=None)
def test_parse_answer_total_and_idempotent(text):
    choices = ("Yes", "No", "Very Good", "Good")
    out = parse_answer(text, choices)
    assert out is NO_ANSWER or out in choices
    if out is not NO_ANSWER:
        assert parse_answer(out, choices) == out


# --- cache keys ----------------------------------------------------------------


def test_cache_key_deterministic():
    assert cache_key(make_request()) == cache_key(make_request())


def test_cache_key_sensitive_to_prompt_bytes():
    import random

    rng = random.Random(5)
    base_text = "The alpha is 1. The beta is 2."
    base_key = cache_key(make_request(base_text))
    texts, keys = {base_text}, {base_key}
    for _ in range(1000):
        pos = rng.randrange(len(base_text))
        mutated = base_text[:pos] + chr(rng.randrange(33, 127)) + base_text[pos + 1 :]
        if mutated == base_text:
            continue
        key = cache_key(make_request(mutated))
        assert key != base_key
        texts.add(mutated)
        keys.add(key)
    assert len(keys) == len(texts)  # distinct inputs, distinct keys


def test_cache_key_includes_temperature_and_model():
    assert cache_key(make_request(temperature=0.0)) != cache_key(make_request(temperature=0.5))
    assert cache_key(make_request(model="m1")) != cache_key(make_request(model="m2"))


# --- scripted clients -----------------------------------------------------------


def test_scripted_fixed_text():
    client = ScriptedClient(ScriptedPolicy(mode="fixed_text", text="Yes"))
    resp = client.complete(make_request())
    assert resp.text == "Yes"
    assert resp.cached is False
    assert client.call_count == 1


def test_scripted_rule_on_features_blood():
    policy = ScriptedPolicy.from_dict(
        {
            "mode": "rule_on_features",
            "rules": [
                {
                    "feature": "Recency - months since last donation",
                    "op": "<",
                    "value": 5,
                    "answer": "Yes",
                }
            ],
            "default": "No",
        }
    )
    client = ScriptedClient(policy)
    req = CompletionRequest(prompt=blood_query_prompt(3.0), model_name="m", role=PREDICTOR)
    assert client.complete(req).text == "Yes"
    req = CompletionRequest(prompt=blood_query_prompt(9.0), model_name="m", role=PREDICTOR)
    assert client.complete(req).text == "No"


def test_scripted_rule_requires_query_section():
    policy = ScriptedPolicy.from_dict(
        {"mode": "rule_on_features", "rules": [], "default": "No"}
    )
    client = ScriptedClient(policy)
    with pytest.raises(ScriptError):
        client.complete(make_request("no markers here"))


def test_scripted_hash_keyed_changes_with_prompt():
    policy = ScriptedPolicy(mode="keyed_by_prompt_hash", texts=("Yes", "No"))
    client = ScriptedClient(policy)
    texts = {
        client.complete(make_request(f"prompt variant {i}")).text for i in range(32)
    }
    assert texts == {"Yes", "No"}
    # deterministic per prompt
    assert (
        client.complete(make_request("fixed")).text
        == client.complete(make_request("fixed")).text
    )


def test_scripted_purity():
    client = ScriptedClient(ScriptedPolicy(mode="fixed_text", text="alpha"))
    req = make_request()
    responses = {client.complete(req).text for _ in range(100)}
    assert responses == {"alpha"}


def test_scripted_policy_validation():
    with pytest.raises(ConfigError):
        ScriptedPolicy(mode="nonsense")
    with pytest.raises(ConfigError):
        ScriptedPolicy(mode="keyed_by_prompt_hash", texts=())
    with pytest.raises(ConfigError):
        ScriptedPolicy(mode="rule_on_features", default="")


def test_parse_query_features_round_trip():
    prompt = blood_query_prompt(3.0)
    feats = parse_query_features(prompt.text)
    assert feats["Recency - months since last donation"] == "3"
    assert feats["Monetary - total blood donated in c.c."] == "1250"
    assert len(feats) == 4


# --- live client ----------------------------------------------------------------


def successful_body(text="Yes"):
    return {
        "choices": [{"message": {"content": text}}],
        "usage": {"prompt_tokens": 11, "completion_tokens": 3},
    }


def test_live_client_payload_shape(monkeypatch):
    monkeypatch.setenv("LLM_API_KEY", "sk-test")
    captured = {}

    def transport(url, headers, payload):
        captured.update(url=url, headers=headers, payload=payload)
        return successful_body()

    client = LiveClient("https://example.test/v1/chat/completions", transport=transport)
    resp = client.complete(make_request("prompt body", model="gpt-x", temperature=0.0))
    assert captured["url"].endswith("/chat/completions")
    assert captured["headers"]["Authorization"] == "Bearer sk-test"
    assert captured["payload"]["model"] == "gpt-x"
    assert captured["payload"]["messages"] == [{"role": "user", "content": "prompt body"}]
    assert resp.text == "Yes"
    assert resp.input_tokens == 11 and resp.output_tokens == 3


def test_live_client_retries_then_succeeds(monkeypatch):
    monkeypatch.setenv("LLM_API_KEY", "sk-test")
    attempts = []

    def transport(url, headers, payload):
        attempts.append(1)
        if len(attempts) < 3:
            raise GatewayError("server error 503")
        return successful_body("No")

    client = LiveClient("https://example.test", transport=transport, backoff_seconds=0.0)
    resp = client.complete(make_request())
    assert resp.text == "No"
    assert len(attempts) == 3


def test_live_client_exhausts_retries(monkeypatch):
    monkeypatch.setenv("LLM_API_KEY", "sk-test")

    def transport(url, headers, payload):
        raise GatewayError("server error 500")

    client = LiveClient("https://example.test", transport=transport, backoff_seconds=0.0, max_retries=2)
    with pytest.raises(GatewayError, match="after 2 attempts"):
        client.complete(make_request())


def test_live_client_requires_key(monkeypatch):
    monkeypatch.delenv("LLM_API_KEY", raising=False)
    client = LiveClient("https://example.test", transport=lambda *a: successful_body())
    with pytest.raises(ConfigError, match="LLM_API_KEY"):
        client.complete(make_request())


# --- ledger ----------------------------------------------------------------------


def price_table():
    return {"m1": {"input": 1e-6, "output": 2e-6}}


def test_tally_arithmetic():
    ledger = UsageLedger()
    resp = CompletionResponse(
        text="x", input_tokens=1000, output_tokens=500, cached=False, model_name="m1", role=PREDICTOR
    )
    tally(ledger, resp, price_table())
    assert ledger.usage(PREDICTOR).cost_usd == pytest.approx(0.002, abs=1e-12)
    zero = CompletionResponse(
        text="", input_tokens=0, output_tokens=0, cached=False, model_name="m1", role=PREDICTOR
    )
    tally(ledger, zero, price_table())
    assert ledger.usage(PREDICTOR).cost_usd == pytest.approx(0.002, abs=1e-12)


def test_tally_cached_is_free():
    ledger = UsageLedger()
    resp = CompletionResponse(
        text="x", input_tokens=1000, output_tokens=500, cached=True, model_name="m1", role=PREDICTOR
    )
    tally(ledger, resp, price_table())
    usage = ledger.usage(PREDICTOR)
    assert usage.cost_usd == 0.0
    assert usage.cache_hits == 1
    assert usage.requests == 1


def test_tally_unknown_model():
    ledger = UsageLedger()
    resp = CompletionResponse(
        text="x", input_tokens=1, output_tokens=1, cached=False, model_name="mystery", role=PREDICTOR
    )
    with pytest.raises(ConfigError):
        tally(ledger, resp, price_table())


def test_ledger_monotone_over_run():
    ledger = UsageLedger()
    import random

    rng = random.Random(0)
    last_cost, last_tokens = 0.0, 0
    for _ in range(50):
        resp = CompletionResponse(
            text="x",
            input_tokens=rng.randrange(0, 500),
            output_tokens=rng.randrange(0, 500),
            cached=rng.random() < 0.3,
            model_name="m1",
            role=rng.choice((SUMMARIZER, PREDICTOR)),
        )
        tally(ledger, resp, price_table())
        cost = ledger.total_cost_usd
        tokens = sum(u.input_tokens + u.output_tokens for u in ledger.roles.values())
        assert cost >= last_cost and tokens >= last_tokens
        last_cost, last_tokens = cost, tokens


# --- cache round trip ---------------------------------------------------------------


def test_gateway_cache_round_trip(tmp_path):
    ledger = UsageLedger()
    client = ScriptedClient(ScriptedPolicy(mode="fixed_text", text="Yes indeed"))
    gw = Gateway(client, ledger=ledger, price_table={"m1": {"input": 1e-6, "output": 1e-6}},
                 cache_dir=tmp_path / "cache")
    req = make_request("cache me")
    first = gw.complete(req)
    second = gw.complete(req)
    assert first.cached is False and second.cached is True
    assert second.text == first.text
    assert second.input_tokens == first.input_tokens
    assert client.call_count == 1  # second served from disk
    usage = ledger.usage(PREDICTOR)
    assert usage.requests == 2 and usage.cache_hits == 1


def test_gateway_cache_many_random_requests(tmp_path):
    import random

    rng = random.Random(9)
    client = ScriptedClient(ScriptedPolicy(mode="keyed_by_prompt_hash", texts=("a", "b", "c")))
    gw = Gateway(client, cache_dir=tmp_path / "cache")
    prompts = ["".join(rng.choices("abcdefgh \n", k=rng.randrange(1, 60))) for _ in range(500)]
    first_pass = [gw.complete(make_request(p)).text for p in prompts]
    second_pass = []
    for p in prompts:
        resp = gw.complete(make_request(p))
        assert resp.cached is True
        second_pass.append(resp.text)
    assert first_pass == second_pass


def test_completion_request_validation():
    with pytest.raises(ValueError):
        make_request(temperature=-0.1)
    with pytest.raises(ValueError):
        CompletionRequest(
            prompt=PromptText.of("x", "classify"), model_name="m", role="oracle"
        )
