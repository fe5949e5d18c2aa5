"""Prompt construction, response grammar, retry behavior, transports."""

import json

import pytest

from cirforge.errors import EmptyField, MissingField, TransportError
from cirforge.llm import (
    HttpTransport,
    LlmEdit,
    MockTransport,
    ScriptedTransport,
    build_prompt,
    caption_from_prompt,
    generate_llm_edit,
    parse_response,
    serialize_edit,
)

VALID = "Instruction: add a hat.\nEdited Description: a dog wearing a hat."


class TestBuildPrompt:
    def test_caption_slot_substituted(self):
        prompt = build_prompt("a dog on grass")
        assert '"Image Content: a dog on grass"' in prompt
        assert "{}" not in prompt

    def test_fixed_framing_present(self):
        prompt = build_prompt("x")
        assert prompt.startswith("I have an image.")
        assert prompt.endswith("Each time generate one instruction and one edited description only.")
        assert 'should begin with "Instruction:"' in prompt
        assert 'should begin with "Edited Description:"' in prompt

    def test_quotes_preserved_unescaped(self):
        prompt = build_prompt('a sign saying "open"')
        assert 'a sign saying "open"' in prompt

    def test_byte_stable(self):
        assert build_prompt("a dog") == build_prompt("a dog")

    def test_round_trip_caption(self):
        assert caption_from_prompt(build_prompt("a very odd caption")) == "a very odd caption"

    def test_empty_caption_rejected(self):
        with pytest.raises(ValueError):
            build_prompt("")


class TestParseResponse:
    def test_two_line_grammar(self):
        edit = parse_response(VALID)
        assert edit == LlmEdit("add a hat.", "a dog wearing a hat.")

    def test_missing_edited_description(self):
        with pytest.raises(MissingField) as exc:
            parse_response("Instruction: add a hat.")
        assert exc.value.field == "edited_description"

    def test_missing_instruction(self):
        with pytest.raises(MissingField) as exc:
            parse_response("Edited Description: a dog.")
        assert exc.value.field == "instruction"

    def test_chatty_preamble_tolerated(self):
        response = (
            "Sure! Here is an edit for your image.\n"
            "\n"
            "   instruction:   make the sky pink.\n"
            "Some filler text.\n"
            "EDITED DESCRIPTION: a pink sky over the hill.\n"
            "Instruction: this later line is ignored.\n"
        )
        edit = parse_response(response)
        assert edit.instruction == "make the sky pink."
        assert edit.edited_description == "a pink sky over the hill."

    def test_empty_field(self):
        with pytest.raises(EmptyField):
            parse_response("Instruction:   \nEdited Description: a dog.")

    def test_serialize_round_trip(self):
        edit = LlmEdit("add a hat.", "a dog wearing a hat.")
        assert parse_response(serialize_edit(edit)) == edit

    def test_llm_edit_rejects_empty(self):
        with pytest.raises(ValueError):
            LlmEdit("", "x")


class TestGenerateLlmEdit:
    def test_valid_mock(self):
        transport = MockTransport({"a dog": VALID})
        edit = generate_llm_edit("a dog", transport)
        assert edit.instruction == "add a hat."

    def test_garbage_with_zero_retries_surfaces_parse_error(self):
        transport = ScriptedTransport(["complete nonsense"])
        with pytest.raises(MissingField):
            generate_llm_edit("a dog", transport, retries=0)

    def test_fail_once_then_succeed(self):
        transport = ScriptedTransport(["garbage", VALID])
        edit = generate_llm_edit("a dog", transport, retries=1)
        assert edit.edited_description == "a dog wearing a hat."
        assert transport.calls == 2

    def test_transport_error_retried_then_surfaced(self):
        transport = ScriptedTransport([TransportError("down"), TransportError("down")])
        with pytest.raises(TransportError):
            generate_llm_edit("a dog", transport, retries=1)

    def test_negative_retries_rejected(self):
        with pytest.raises(ValueError):
            generate_llm_edit("a dog", MockTransport({}), retries=-1)


class TestMockTransport:
    def test_unknown_caption_is_transport_error(self):
        transport = MockTransport({"a dog": VALID})
        with pytest.raises(TransportError):
            transport.send(build_prompt("a cat"))

    def test_from_file(self, tmp_path):
        path = tmp_path / "mock.jsonl"
        path.write_text(json.dumps({"caption": "a dog", "response": VALID}) + "\n")
        transport = MockTransport.from_file(path)
        assert transport.send(build_prompt("a dog")) == VALID


class TestHttpTransport:
    def test_from_env_requires_endpoint_and_model(self, monkeypatch):
        monkeypatch.delenv("CIRFORGE_LLM_ENDPOINT", raising=False)
        monkeypatch.delenv("CIRFORGE_LLM_MODEL", raising=False)
        with pytest.raises(TransportError):
            HttpTransport.from_env()

    def test_request_payload_and_parse(self, monkeypatch):
        captured = {}

        class FakeResponse:
            def read(self):
                return json.dumps(
                    {"choices": [{"message": {"content": VALID}}]}
                ).encode()

            def __enter__(self):
                return self

            def __exit__(self, *args):
                return False

        def fake_urlopen(request, timeout):
            captured["url"] = request.full_url
            captured["body"] = json.loads(request.data.decode())
            captured["auth"] = request.get_header("Authorization")
            captured["timeout"] = timeout
            return FakeResponse()

        monkeypatch.setattr("urllib.request.urlopen", fake_urlopen)
        transport = HttpTransport("http://llm.test/v1/chat", "test-model", token="secret")
        out = transport.send(build_prompt("a dog"))
        assert out == VALID
        assert captured["url"] == "http://llm.test/v1/chat"
        assert captured["body"]["model"] == "test-model"
        assert captured["body"]["messages"][0]["role"] == "user"
        assert "Image Content: a dog" in captured["body"]["messages"][0]["content"]
        assert captured["auth"] == "Bearer secret"
        assert captured["timeout"] == 30.0

    def test_malformed_body_is_transport_error(self, monkeypatch):
        class FakeResponse:
            def read(self):
                return b'{"unexpected": true}'

            def __enter__(self):
                return self

            def __exit__(self, *args):
                return False

        monkeypatch.setattr("urllib.request.urlopen", lambda *a, **k: FakeResponse())
        transport = HttpTransport("http://llm.test", "m")
        with pytest.raises(TransportError):
            transport.send("hello")
