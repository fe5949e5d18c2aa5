"""Prompted caption editing through a pluggable chat transport.

The prompt asks for exactly one edit instruction and one edited
description, marked by "Instruction:" and "Edited Description:" lines.
Responses are parsed leniently (case-insensitive prefixes, preamble
tolerated) because real chat models drift in formatting.
"""

from __future__ import annotations

import json
import os
import urllib.error
import urllib.request
from dataclasses import dataclass

from .errors import EmptyField, MissingField, TransportError

ENV_ENDPOINT = "CIRFORGE_LLM_ENDPOINT"
ENV_MODEL = "CIRFORGE_LLM_MODEL"
ENV_TOKEN = "CIRFORGE_LLM_TOKEN"

PROMPT_TEMPLATE = (
    "I have an image. Carefully generate an informative instruction to edit this "
    "image content and generate a description of the edited image. I will put my "
    'image content beginning with "Image Content:". The instruction you generate '
    'should begin with "Instruction:". The edited description you generate should '
    'begin with "Edited Description:". The Instruction you generate can cover '
    "various semantic aspects, including cardinality, addition, negation, direct "
    "addressing, compare&change, comparative, conjunction, spatial "
    "relations&background, viewpoint. The edited description need to be as simple "
    "as possible. The instruction does not need to explicitly indicate which type "
    'it is. Avoid adding imaginary things. "Image Content: {}". Each time generate '
    "one instruction and one edited description only."
)

_PROMPT_HEAD, _PROMPT_TAIL = PROMPT_TEMPLATE.split("{}")

_INSTRUCTION_MARK = "instruction:"
_EDITED_MARK = "edited description:"


@dataclass(frozen=True)
class LlmEdit:
    instruction: str
    edited_description: str

    def __post_init__(self):
        if not self.instruction.strip() or not self.edited_description.strip():
            raise ValueError("LlmEdit fields must be non-empty")


def build_prompt(image_caption: str) -> str:
    """The fixed prompt with the caption dropped into the Image Content slot."""
    if not image_caption:
        raise ValueError("caption must be non-empty")
    return _PROMPT_HEAD + image_caption + _PROMPT_TAIL


def caption_from_prompt(prompt: str) -> str | None:
    """Invert build_prompt; None when the prompt is not ours."""
    if prompt.startswith(_PROMPT_HEAD) and prompt.endswith(_PROMPT_TAIL):
        return prompt[len(_PROMPT_HEAD):len(prompt) - len(_PROMPT_TAIL)]
    return None


def _first_marked_line(lines, mark: str) -> str | None:
    for raw in lines:
        line = raw.strip()
        if line[:len(mark)].lower() == mark:
            return line[len(mark):].strip()
    return None


def parse_response(response: str) -> LlmEdit:
    """Extract the first Instruction/Edited Description lines of a response."""
    lines = response.splitlines()
    instruction = _first_marked_line(lines, _INSTRUCTION_MARK)
    if instruction is None:
        raise MissingField("instruction")
    edited = _first_marked_line(lines, _EDITED_MARK)
    if edited is None:
        raise MissingField("edited_description")
    if not instruction:
        raise EmptyField("instruction")
    if not edited:
        raise EmptyField("edited_description")
    return LlmEdit(instruction, edited)


def serialize_edit(edit: LlmEdit) -> str:
    """Canonical two-line form; parse_response inverts it."""
    return f"Instruction: {edit.instruction}\nEdited Description: {edit.edited_description}"


class MockTransport:
    """Offline transport with canned responses keyed by caption.

    The response file is JSON-lines with fields ``caption`` and
    ``response``; a caption with no canned response is a transport error,
    mirroring an unreachable server.
    """

    def __init__(self, responses: dict[str, str]):
        self._responses = dict(responses)

    @classmethod
    def from_file(cls, path) -> "MockTransport":
        responses = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                responses[obj["caption"]] = obj["response"]
        return cls(responses)

    def send(self, prompt: str) -> str:
        caption = caption_from_prompt(prompt)
        if caption is None or caption not in self._responses:
            raise TransportError(f"no canned response for caption {caption!r}")
        return self._responses[caption]


class ScriptedTransport:
    """Replays a fixed sequence of responses; exceptions in the list raise."""

    def __init__(self, script):
        self._script = list(script)
        self.calls = 0

    def send(self, prompt: str) -> str:
        if not self._script:
            raise TransportError("scripted transport exhausted")
        self.calls += 1
        item = self._script.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


class HttpTransport:
    """Chat-completion HTTP JSON client; auth token comes from the environment."""

    def __init__(self, endpoint: str, model: str, token: str | None = None, timeout: float = 30.0):
        self.endpoint = endpoint
        self.model = model
        self._token = token
        self.timeout = timeout

    @classmethod
    def from_env(cls, timeout: float = 30.0) -> "HttpTransport":
        endpoint = os.environ.get(ENV_ENDPOINT)
        model = os.environ.get(ENV_MODEL)
        if not endpoint or not model:
            raise TransportError(
                f"live transport needs {ENV_ENDPOINT} and {ENV_MODEL} set"
            )
        return cls(endpoint, model, os.environ.get(ENV_TOKEN), timeout=timeout)

    def send(self, prompt: str) -> str:
        payload = json.dumps({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
        }).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self._token:
            headers["Authorization"] = f"Bearer {self._token}"
        request = urllib.request.Request(self.endpoint, data=payload, headers=headers)
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as response:
                body = json.loads(response.read().decode("utf-8"))
        except (urllib.error.URLError, TimeoutError, ValueError) as exc:
            raise TransportError(f"chat endpoint failed: {exc}") from exc
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed chat response: {exc!r}") from exc


def generate_llm_edit(caption: str, transport, retries: int = 2) -> LlmEdit:
    """build_prompt -> send -> parse, retrying failures up to `retries` times."""
    if retries < 0:
        raise ValueError("retries must be >= 0")
    prompt = build_prompt(caption)
    last_error = None
    for _ in range(retries + 1):
        try:
            return parse_response(transport.send(prompt))
        except (TransportError, MissingField, EmptyField) as exc:
            last_error = exc
    raise last_error
