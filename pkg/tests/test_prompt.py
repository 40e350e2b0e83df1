from types import SimpleNamespace

import openai
import pytest

from dataset import MockPromptGenerator, generate_groups
from model.Manifest import CaptionPair, GroupDraft
from model.errors import ProviderError, RangeError
from model.prompt import ClassSelection, OpenAIPromptGenerator, OpenAIUnifier, Prompt
from model.providers import resolve_provider

from conftest import tiny


def _response(content=None, parsed=None):
    return SimpleNamespace(choices=[SimpleNamespace(message=SimpleNamespace(content=content, parsed=parsed))])


class FakeCompletions:
    def __init__(self, replies) -> None:
        self.replies = list(replies)
        self.requests = []

    def create(self, **kwargs):
        self.requests.append(kwargs)
        return _response(content=self.replies.pop(0))

    def parse(self, **kwargs):
        self.requests.append(kwargs)
        return _response(parsed=self.replies.pop(0))


class FakeClient:
    def __init__(self, replies) -> None:
        self.completions = FakeCompletions(replies)
        self.chat = SimpleNamespace(completions=self.completions)
        self.beta = SimpleNamespace(chat=SimpleNamespace(completions=self.completions))


def test_unifier_memoizes_replies() -> None:
    client = FakeClient([" change the circle to blue \n"])
    uni = OpenAIUnifier(Prompt(client, model="test-model", seed=3))

    assert uni.unify("Paint the circle blue.") == "change the circle to blue"
    assert uni.unify("Paint the circle blue.") == "change the circle to blue"
    assert uni.unify("change the circle to blue") == "change the circle to blue"
    assert len(client.completions.requests) == 1

    request = client.completions.requests[0]
    assert request["model"] == "test-model" and request["seed"] == 3 and request["temperature"] == 0
    assert request["messages"][0] == {"role": "system", "content": Prompt.UNIFY_PROMPT}
    assert request["messages"][1] == {"role": "user", "content": "Paint the circle blue."}


def test_unifier_rejects_empty_instruction() -> None:
    with pytest.raises(RangeError):
        OpenAIUnifier(Prompt(FakeClient([]))).unify("")


def test_filter_classes_keeps_known_names_in_order() -> None:
    client = FakeClient([ClassSelection(classes=["animal", "person", "unicorn"])])
    uni = OpenAIUnifier(Prompt(client))

    assert uni.filter_classes(["person", "sky", "animal"], ["living"]) == ["person", "animal"]
    assert uni.filter_classes([], ["living"]) == []
    assert len(client.completions.requests) == 1


def test_prompt_generator_returns_structured_group() -> None:
    draft = GroupDraft(instruction="shrink the square", caption_pairs=[
        CaptionPair(caption="a large red square at the left on a grey background",
                    edited_caption="a small red square at the left on a grey background"),
    ])
    client = FakeClient([draft])

    assert OpenAIPromptGenerator(Prompt(client)).generate(4) == draft
    assert client.completions.requests[0]["response_format"] is GroupDraft


def test_refused_structured_reply_is_a_provider_error() -> None:
    client = FakeClient([])
    client.completions.parse = lambda **kwargs: SimpleNamespace(
        choices=[SimpleNamespace(message=SimpleNamespace(content=None, parsed=None, refusal="I can't help with that."))]
    )
    with pytest.raises(ProviderError, match="can't help"):
        OpenAIPromptGenerator(Prompt(client)).generate(0)


def test_group_generation_skips_unparsed_replies() -> None:
    client = FakeClient([None, MockPromptGenerator().generate(0)])
    groups = generate_groups(2, OpenAIPromptGenerator(Prompt(client)), seed=0)

    assert [group.group_id for group in groups] == ["g0001"]


class FailingCompletions:
    def create(self, **kwargs):
        raise openai.OpenAIError("service unavailable")


def test_openai_errors_become_provider_errors() -> None:
    client = SimpleNamespace(chat=SimpleNamespace(completions=FailingCompletions()))
    with pytest.raises(ProviderError, match="service unavailable"):
        OpenAIUnifier(Prompt(client)).unify("make the circle blue")


def test_empty_response_is_a_provider_error() -> None:
    client = FakeClient([])
    client.completions.create = lambda **kwargs: SimpleNamespace(choices=[])
    with pytest.raises(ProviderError):
        Prompt(client).prompt(Prompt.UNIFY_PROMPT, [])


def test_prompt_requires_client() -> None:
    with pytest.raises(ValueError):
        Prompt(None)


def test_external_adapter_needs_api_key(monkeypatch) -> None:
    monkeypatch.delenv("OPENAI_API_KEY", raising=False)
    with pytest.raises(ProviderError, match="OPENAI_API_KEY"):
        resolve_provider("unifier", "external:openai", tiny())
