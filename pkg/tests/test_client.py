import json
import threading
import time

import httpx
import pytest

from apf.errors import ExhaustedRetries, HttpError, ProviderError, ProviderTimeout
from apf.llm import HttpChatClient, ProviderConfig, RetryPolicy, build_paraphrase_prompt
from apf.formulation import Band, MetricId, Requirement, RequirementSet, Threshold

REQS = RequirementSet("r", (Requirement(Band(1, 2), MetricId("gain"), Threshold(">=", 3.0, "min"), "Gain at least 3."),))
PROMPT = build_paraphrase_prompt(REQS, 2)
URL = "http://llm.test/v1"


def ok(content="hello"):
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": content}}]})


def client(handler, attempts=4, concurrency=4):
    cfg = ProviderConfig(endpoint=URL, model="m", max_concurrency=concurrency, retry=RetryPolicy(max_attempts=attempts))
    sleeps = []
    c = HttpChatClient(cfg, transport=httpx.MockTransport(handler), sleep=sleeps.append)
    return c, sleeps


def scripted(*responses):
    queue = list(responses)
    seen = []

    def handler(request):
        seen.append(request)
        item = queue.pop(0)
        if isinstance(item, Exception):
            raise item
        return item

    return handler, seen


def test_retry_after_429_then_success():
    handler, seen = scripted(httpx.Response(429), httpx.Response(429), ok("done"))
    c, sleeps = client(handler)
    assert c.complete(PROMPT) == "done"
    assert c.attempt_log == [3]
    assert sleeps == [0.5, 1.0]
    body = json.loads(seen[0].content)
    assert seen[0].url == URL + "/chat/completions"
    assert body["model"] == "m" and body["temperature"] == 0.7
    assert body["messages"] == [{"role": "user", "content": PROMPT.render()}]


def test_exhausted_retries_carry_last_status():
    handler, _ = scripted(httpx.Response(503), httpx.Response(502), httpx.Response(429))
    c, _ = client(handler, attempts=3)
    with pytest.raises(ExhaustedRetries) as exc:
        c.complete(PROMPT)
    assert exc.value.attempts == 3 and exc.value.last_status == 429


def test_non_retryable_status():
    handler, seen = scripted(httpx.Response(400, text="bad request"))
    c, _ = client(handler)
    with pytest.raises(HttpError) as exc:
        c.complete(PROMPT)
    assert exc.value.status == 400 and len(seen) == 1


def test_timeouts():
    handler, _ = scripted(httpx.ReadTimeout("slow"), httpx.ReadTimeout("slow"))
    c, _ = client(handler, attempts=2)
    with pytest.raises(ProviderTimeout):
        c.complete(PROMPT)


def test_timeout_then_success():
    handler, _ = scripted(httpx.ConnectTimeout("slow"), ok())
    c, _ = client(handler)
    assert c.complete(PROMPT) == "hello"


def test_malformed_body():
    handler, _ = scripted(httpx.Response(200, json={"choices": []}))
    c, _ = client(handler)
    with pytest.raises(ProviderError):
        c.complete(PROMPT)


def test_api_key_header(monkeypatch):
    monkeypatch.setenv("APF_API_KEY", "secret")
    handler, seen = scripted(ok())
    c, _ = client(handler)
    c.complete(PROMPT)
    assert seen[0].headers["authorization"] == "Bearer secret"


def test_endpoint_from_environment(monkeypatch):
    monkeypatch.setenv("APF_API_BASE", "http://env.test/v1/")
    assert ProviderConfig().resolved_endpoint() == "http://env.test/v1/chat/completions"
    monkeypatch.delenv("APF_API_BASE")
    with pytest.raises(ProviderError):
        ProviderConfig().resolved_endpoint()


def test_config_validation():
    with pytest.raises(ValueError):
        ProviderConfig(max_concurrency=0)
    with pytest.raises(ValueError):
        RetryPolicy(max_attempts=0)
    assert RetryPolicy().delay(10) == 8.0


def test_concurrency_is_bounded():
    lock = threading.Lock()
    state = {"now": 0, "peak": 0}

    def handler(request):
        with lock:
            state["now"] += 1
            state["peak"] = max(state["peak"], state["now"])
        time.sleep(0.02)
        with lock:
            state["now"] -= 1
        return ok()

    c, _ = client(handler, concurrency=2)
    threads = [threading.Thread(target=c.complete, args=(PROMPT,)) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert state["peak"] <= 2
    assert c.attempt_log == [1] * 8
