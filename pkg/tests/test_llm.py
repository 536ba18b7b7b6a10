import json

import httpx
import pytest

from sciteam.errors import CompletionError, ParseError, ScriptError, TransportError
from sciteam.llm import (
    CallKey,
    ChatMessage,
    ChatRequest,
    FieldSpec,
    HttpChatBackend,
    ScriptedBackend,
    UsageLedger,
    complete,
    make_request,
    parse_continue,
    parse_decision,
    parse_novelty_verdict,
    parse_structured,
    parse_vote,
)


def req(user="hello"):
    return make_request("m", "system prompt", user, temperature=0.5)


class TestScriptedBackend:
    def test_returns_scripted_entry_verbatim(self):
        backend = ScriptedBackend({"topic/1/0": "T0"})
        ledger = UsageLedger()
        assert complete(backend, req(), CallKey("topic", 1, 0), ledger) == "T0"

    def test_missing_key_is_fatal(self):
        backend = ScriptedBackend({})
        with pytest.raises(ScriptError):
            complete(backend, req(), CallKey("topic", 1, 0), UsageLedger())

    def test_ledger_counts_calls(self):
        backend = ScriptedBackend({f"s/{i}/0": f"r{i}" for i in range(10)})
        ledger = UsageLedger()
        for i in range(10):
            complete(backend, req(), CallKey("s", i, 0), ledger)
        assert ledger.calls == 10
        assert ledger.stage("s").calls == 10
        assert ledger.stage("s").prompt_chars == 10 * req().prompt_chars

    def test_empty_completion_reasks_once_then_fails(self):
        backend = ScriptedBackend({"s/1/0": "   "})
        ledger = UsageLedger()
        with pytest.raises(CompletionError):
            complete(backend, req(), CallKey("s", 1, 0), ledger)
        assert ledger.stage("s").attempts == 2
        assert ledger.stage("s").calls == 0

    def test_script_file_roundtrip(self, tmp_path):
        path = tmp_path / "script.json"
        path.write_text(json.dumps({"a/1/0": "ok"}))
        backend = ScriptedBackend.from_file(path)
        assert backend.script == {"a/1/0": "ok"}

    def test_bad_script_file(self, tmp_path):
        path = tmp_path / "script.json"
        path.write_text(json.dumps({"a/1/0": 5}))
        with pytest.raises(ScriptError):
            ScriptedBackend.from_file(path)


class FlakyBackend:
    """Fails with a retryable transport error a set number of times."""

    def __init__(self, failures, text="finally"):
        self.failures = failures
        self.text = text
        self.calls = 0

    def complete(self, request, key):
        self.calls += 1
        if self.calls <= self.failures:
            raise TransportError("boom")
        return self.text


class TestRetries:
    def test_transport_retry_then_success(self):
        backend = FlakyBackend(failures=2)
        ledger = UsageLedger()
        out = complete(backend, req(), CallKey("s", 1, 0), ledger, max_attempts=3, backoff=0)
        assert out == "finally"
        assert ledger.stage("s").attempts == 3
        assert ledger.stage("s").calls == 1

    def test_exhausted_retries_raise(self):
        backend = FlakyBackend(failures=5)
        with pytest.raises(TransportError):
            complete(backend, req(), CallKey("s", 1, 0), UsageLedger(), max_attempts=3, backoff=0)


class TestHttpChatBackend:
    def _backend(self, handler):
        return HttpChatBackend("http://llm.test/v1", transport=httpx.MockTransport(handler))

    def test_success(self):
        def handler(request):
            payload = json.loads(request.content)
            assert payload["model"] == "m"
            assert payload["messages"][0]["role"] == "system"
            return httpx.Response(200, json={"choices": [{"message": {"content": "hi there"}}]})

        backend = self._backend(handler)
        assert complete(backend, req(), CallKey("s", 1, 0), UsageLedger()) == "hi there"

    def test_server_error_retried(self):
        state = {"n": 0}

        def handler(request):
            state["n"] += 1
            if state["n"] < 3:
                return httpx.Response(500, text="overloaded")
            return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

        backend = self._backend(handler)
        out = complete(backend, req(), CallKey("s", 1, 0), UsageLedger(), backoff=0)
        assert out == "ok" and state["n"] == 3

    def test_client_error_not_retried(self):
        def handler(request):
            return httpx.Response(400, text="bad request")

        backend = self._backend(handler)
        with pytest.raises(CompletionError):
            complete(backend, req(), CallKey("s", 1, 0), UsageLedger(), backoff=0)

    def test_seed_forwarded(self):
        def handler(request):
            assert json.loads(request.content)["seed"] == 77
            return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

        backend = self._backend(handler)
        request = ChatRequest(model="m", messages=req().messages, temperature=0.1, seed=77)
        assert complete(backend, request, CallKey("s", 1, 0), UsageLedger()) == "ok"


class TestMessageValidation:
    def test_unknown_role(self):
        with pytest.raises(ValueError):
            ChatMessage("narrator", "x")

    def test_empty_user_content(self):
        with pytest.raises(ValueError):
            ChatMessage("user", "")

    def test_first_message_must_be_system(self):
        with pytest.raises(ValueError):
            ChatRequest(model="m", messages=(ChatMessage("user", "x"),))

    def test_negative_temperature(self):
        with pytest.raises(ValueError):
            make_request("m", "s", "u", temperature=-0.1)


IDEA_SCHEMA = (
    FieldSpec("idea", label="Idea"),
    FieldSpec("experiment", label="Experiment"),
    FieldSpec("novelty", label="Novelty", kind="int", minimum=1, maximum=10),
    FieldSpec("feasibility", label="Feasibility", kind="int", minimum=1, maximum=10),
    FieldSpec("clarity", label="Clarity", kind="int", minimum=1, maximum=10),
)


class TestParseStructured:
    def test_labeled_extraction(self):
        text = "Idea: X\nExperiment: Y\nNovelty: 8\nFeasibility: 6\nClarity: 7"
        parsed = parse_structured(text, IDEA_SCHEMA)
        assert parsed == {"idea": "X", "experiment": "Y", "novelty": 8, "feasibility": 6, "clarity": 7}

    def test_out_of_range_score(self):
        text = "Idea: X\nExperiment: Y\nNovelty: 11\nFeasibility: 6\nClarity: 7"
        with pytest.raises(ParseError):
            parse_structured(text, IDEA_SCHEMA)

    def test_missing_required_field_keeps_raw(self):
        text = "Idea: X\nNovelty: 8"
        with pytest.raises(ParseError) as err:
            parse_structured(text, IDEA_SCHEMA)
        assert err.value.raw == text

    def test_multiline_sections(self):
        text = "Idea: line one\nline two\nExperiment: steps\nNovelty: 5\nFeasibility: 5\nClarity: 5"
        parsed = parse_structured(text, IDEA_SCHEMA)
        assert parsed["idea"] == "line one\nline two"

    def test_markdown_bold_labels_tolerated(self):
        text = "**Idea**: X\n**Experiment**: Y\nNovelty: 3\nFeasibility: 3\nClarity: 3"
        assert parse_structured(text, IDEA_SCHEMA)["idea"] == "X"

    def test_case_insensitive_labels(self):
        text = "IDEA: X\nexperiment: Y\nNovelty: 2\nFeasibility: 2\nClarity: 2"
        assert parse_structured(text, IDEA_SCHEMA)["experiment"] == "Y"

    def test_optional_field_absent(self):
        schema = (FieldSpec("note", label="Note", required=False), FieldSpec("idea", label="Idea"))
        assert parse_structured("Idea: X", schema) == {"idea": "X"}


# Each phrasing was labeled by hand when the corpus was written; the
# parser must reproduce every label.
VOTE_CORPUS = [
    ("CHOICE: 2\nIt is the most distinct.", 2),
    ("Choice: idea 3", 3),
    ("I choose Idea 2 because it avoids overlap.", 2),
    ("After comparing all three, I vote for idea 1.", 1),
    ("My vote: 3", 3),
    ("Decision: 2 — strongest experimental plan.", 2),
    ("I would go with 3.", 3),
    ("Idea 2 is clearly the most novel of the set.", 2),
    ("I pick idea #1.", 1),
    ("Let me select idea 3; the others overlap with prior work.", 3),
    ("I prefer the second idea.", 2),
    ("The first idea stands out as most original.", 1),
    ("I support idea 2 over the others.", 2),
    ("Comparing idea 1 and idea 2 carefully, CHOICE: 2.", 2),
    ("3", 3),
    ("#2", 2),
    ("I back the third one.", 3),
    ("selection: idea 1", 1),
    ("Although idea 3 is clever, I choose idea 1 for feasibility.", 1),
    ("vote for Idea #3, final answer.", 3),
]


class TestVoteParsing:
    @pytest.mark.parametrize("text,expected", VOTE_CORPUS)
    def test_hand_labeled_corpus(self, text, expected):
        assert parse_vote(text, 3) == expected

    def test_unparseable_returns_none(self):
        assert parse_vote("They all look fine to me.", 3) is None

    def test_out_of_range_numbers_skipped(self):
        assert parse_vote("I rate idea 7 ... wait, CHOICE: 2", 3) == 2

    def test_no_valid_number_in_range(self):
        assert parse_vote("idea 9 is my favorite", 3) is None


class TestSmallParsers:
    def test_decision_accept(self):
        assert parse_decision("DECISION: ACCEPT\nREASONING: fits well") is True

    def test_decision_reject(self):
        assert parse_decision("DECISION: REJECT\nREASONING: too far afield") is False

    def test_decision_leading_word(self):
        assert parse_decision("Accept — the overlap is strong.") is True

    def test_decision_unparseable(self):
        assert parse_decision("I will think about it.") is None

    def test_verdict_yes(self):
        assert parse_novelty_verdict("NOVEL: YES. Clear differences.") is True

    def test_verdict_no(self):
        assert parse_novelty_verdict("NOVEL: NO — overlaps heavily.") is False

    def test_verdict_unparseable(self):
        assert parse_novelty_verdict("This is interesting work.") is None

    def test_continue(self):
        assert parse_continue("DECISION: CONTINUE, open questions remain") is True
        assert parse_continue("DECISION: STOP. Goal met.") is False
        assert parse_continue("hmm") is None


class TestLedgerThreadSafety:
    def test_concurrent_records(self):
        import threading

        ledger = UsageLedger()

        def work():
            for _ in range(500):
                ledger.record("s", 10, 5, 0.0)

        threads = [threading.Thread(target=work) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert ledger.stage("s").calls == 4000
        assert ledger.stage("s").prompt_chars == 40000
