import json
import threading

import httpx
import pytest

from radjudge.errors import FixtureMiss, MissingCredential, ProviderError, TransportFailure
from radjudge.gateway import (
    CompletionRequest,
    LiveBackend,
    RecordBackend,
    ReplayBackend,
    evaluate_with_iterations,
    fixture_key,
    make_backend,
    write_fixture,
)

REQ = CompletionRequest("system", "user")


def ok_body(text):
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


def live(handler, **kw):
    sleeps = []
    backend = LiveBackend("https://example.test/v1", "key", transport=httpx.MockTransport(handler), sleep=sleeps.append, **kw)
    return backend, sleeps


class TestRequest:
    @pytest.mark.parametrize("temperature", [-0.1, 2.5])
    def test_temperature_range(self, temperature):
        with pytest.raises(ValueError):
            CompletionRequest("s", "u", temperature=temperature)

    def test_max_tokens(self):
        with pytest.raises(ValueError):
            CompletionRequest("s", "u", max_tokens=0)

    def test_defaults(self):
        assert (REQ.temperature, REQ.max_tokens, REQ.model_name) == (0.0, 2048, "gpt-4")


class TestReplay:
    def test_hit(self, tmp_path):
        write_fixture(tmp_path, REQ, 0, "ok")
        resp = ReplayBackend(tmp_path).complete(REQ)
        assert (resp.text, resp.backend_id) == ("ok", "replay")

    def test_fixture_file_layout(self, tmp_path):
        path = write_fixture(tmp_path, REQ, 0, "ok")
        assert path.name == fixture_key(REQ, 0) and len(path.name) == 64
        assert path.read_text() == "ok"

    def test_miss(self, tmp_path):
        with pytest.raises(FixtureMiss) as info:
            ReplayBackend(tmp_path).complete(REQ)
        assert info.value.key == fixture_key(REQ, 0)

    def test_key_covers_content_and_iteration(self):
        keys = {fixture_key(REQ, 0), fixture_key(REQ, 1), fixture_key(CompletionRequest("system", "user!"), 0)}
        assert len(keys) == 3

    def test_verbatim_bytes(self, tmp_path):
        text = "  line one\r\nline two\n\n  trailing  "
        write_fixture(tmp_path, REQ, 0, text)
        assert ReplayBackend(tmp_path).complete(REQ).text == text


class TestIterations:
    def test_three_in_order(self, tmp_path):
        for i in range(3):
            write_fixture(tmp_path, REQ, i, f"r{i}")
        assert [r.text for r in evaluate_with_iterations(ReplayBackend(tmp_path), REQ, 3)] == ["r0", "r1", "r2"]

    def test_single(self, tmp_path):
        write_fixture(tmp_path, REQ, 0, "r0")
        assert len(evaluate_with_iterations(ReplayBackend(tmp_path), REQ, 1)) == 1

    def test_miss_annotated(self, tmp_path):
        for i in range(2):
            write_fixture(tmp_path, REQ, i, f"r{i}")
        with pytest.raises(FixtureMiss) as info:
            evaluate_with_iterations(ReplayBackend(tmp_path), REQ, 3)
        assert info.value.iteration == 2

    def test_zero_iterations(self, tmp_path):
        with pytest.raises(ValueError):
            evaluate_with_iterations(ReplayBackend(tmp_path), REQ, 0)


class TestLive:
    def test_success_and_payload(self):
        seen = {}

        def handler(request):
            seen["url"] = str(request.url)
            seen["auth"] = request.headers["authorization"]
            seen["body"] = json.loads(request.content)
            return httpx.Response(200, json=ok_body("hello"))

        backend, sleeps = live(handler)
        assert backend.complete(REQ).text == "hello"
        assert seen["url"] == "https://example.test/v1/chat/completions"
        assert seen["auth"] == "Bearer key"
        assert seen["body"]["messages"] == [{"role": "system", "content": "system"}, {"role": "user", "content": "user"}]
        assert seen["body"]["temperature"] == 0.0 and seen["body"]["max_tokens"] == 2048
        assert sleeps == []

    def test_retries_then_succeeds(self):
        statuses = iter([429, 503, 200])

        def handler(request):
            code = next(statuses)
            return httpx.Response(code, json=ok_body("done") if code == 200 else {"error": "busy"})

        backend, sleeps = live(handler, max_retries=3, backoff_base=1.0)
        assert backend.complete(REQ).text == "done"
        assert backend.attempts == 3 and len(sleeps) == 2
        assert 0.5 <= sleeps[0] <= 1.0 and 1.0 <= sleeps[1] <= 2.0

    def test_retry_bound(self):
        backend, sleeps = live(lambda r: httpx.Response(500, text="down"), max_retries=2)
        with pytest.raises(TransportFailure):
            backend.complete(REQ)
        assert backend.attempts == 3 and len(sleeps) == 2

    def test_transport_error_retried(self):
        def handler(request):
            raise httpx.ConnectError("refused")

        backend, _ = live(handler, max_retries=1)
        with pytest.raises(TransportFailure):
            backend.complete(REQ)
        assert backend.attempts == 2

    def test_backoff_capped(self):
        backend, sleeps = live(lambda r: httpx.Response(502), max_retries=6, backoff_base=1.0, backoff_cap=4.0)
        with pytest.raises(TransportFailure):
            backend.complete(REQ)
        assert max(sleeps) <= 4.0

    def test_provider_error_not_retried(self):
        backend, _ = live(lambda r: httpx.Response(400, text="bad request " * 50))
        with pytest.raises(ProviderError) as info:
            backend.complete(REQ)
        assert info.value.status == 400 and len(info.value.body) <= 200
        assert backend.attempts == 1

    def test_malformed_body(self):
        backend, _ = live(lambda r: httpx.Response(200, json={"nope": 1}))
        with pytest.raises(ProviderError):
            backend.complete(REQ)

    def test_missing_credentials(self, monkeypatch):
        monkeypatch.delenv("RADJUDGE_API_KEY", raising=False)
        monkeypatch.delenv("RADJUDGE_API_BASE", raising=False)
        with pytest.raises(MissingCredential):
            LiveBackend()

    def test_env_configuration(self, monkeypatch):
        monkeypatch.setenv("RADJUDGE_API_KEY", "k")
        monkeypatch.setenv("RADJUDGE_API_BASE", "https://env.test/")
        backend = LiveBackend(transport=httpx.MockTransport(lambda r: httpx.Response(200, json=ok_body(str(r.url)))))
        assert backend.complete(REQ).text == "https://env.test/chat/completions"

    def test_bounded_concurrency(self):
        lock = threading.Lock()
        state = {"now": 0, "peak": 0}
        gate = threading.Event()

        def handler(request):
            with lock:
                state["now"] += 1
                state["peak"] = max(state["peak"], state["now"])
            gate.wait(0.05)
            with lock:
                state["now"] -= 1
            return httpx.Response(200, json=ok_body("x"))

        backend, _ = live(handler, max_inflight=2)
        threads = [threading.Thread(target=backend.complete, args=(REQ,)) for _ in range(6)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert state["peak"] <= 2


def test_record_then_replay(tmp_path):
    inner, _ = live(lambda r: httpx.Response(200, json=ok_body("recorded text")))
    rec = RecordBackend(inner, tmp_path)
    assert rec.complete(REQ, 1).text == "recorded text"
    assert ReplayBackend(tmp_path).complete(REQ, 1).text == "recorded text"


def test_make_backend(tmp_path):
    assert isinstance(make_backend("replay", tmp_path), ReplayBackend)
    with pytest.raises(ValueError):
        make_backend("carrier-pigeon", tmp_path)
