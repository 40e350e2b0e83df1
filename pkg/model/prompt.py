import os
from dataclasses import dataclass
from typing import Any, Dict

import openai
from openai import OpenAI
from pydantic import BaseModel

from .Manifest import GroupDraft
from .errors import ProviderError, RangeError
from .providers import InstructionUnifier, PromptGenerator, register_adapter


@dataclass
class Message:
    role: str
    content: str

    def to_dict(self) -> Dict[str, Any]:
        return {
            'role': self.role,
            'content': self.content
        }


class ClassSelection(BaseModel):
    classes: list[str]


class Prompt:

    UNIFY_PROMPT = "From now on, a user request will contain one image editing instruction. " \
        "Rewrite it as a short imperative sentence in lowercase without punctuation, using the verb " \
        "'change ... to ...' for colour, object and background changes, 'enlarge' or 'shrink' for size " \
        "changes and 'move ... to the ...' for position changes. " \
        "If the instruction already has this form, return it unchanged. " \
        "You should only reply with the rewritten instruction, without any additional text."

    FILTER_PROMPT = "From now on, a user request will contain a list of segmentation class names and a list " \
        "of selected categories. Reply with the class names that belong to any selected category, " \
        "copied exactly as given."

    GROUP_PROMPT = "From now on, a user request will ask for one group of image edits. Reply with one editing " \
        "instruction and exactly 5 pairs of input and edited captions that the instruction turns into each other. " \
        "Every caption must follow the format 'a {size} {color} {shape} at the {position} on a {background} background' " \
        "with size in (small, large), color in (red, green, blue, yellow, purple, orange), shape in (circle, square, " \
        "triangle), position in (left, right, top, bottom, center) and background in (grey, white, black, beige)."

    def __init__(self, client: OpenAI, model: str = "gpt-4o-mini", seed: int = 0):
        """Initialize the Prompt class with an OpenAI client."""
        if client is None:
            raise ValueError("OpenAI client must be provided")

        self.client = client
        self.model = model
        self.seed = seed

    def prompt(self, system: str, user_messages: list[Message], response_format: type[BaseModel] | None = None):
        """
        Send a prompt to OpenAI and get the response.

        Args:
            system: The system prompt fixing the task
            user_messages: The messages to send to the model
            response_format: Optional pydantic model for structured output

        Returns:
            The parsed pydantic object when a response format is given, otherwise the text reply
        """
        messages = [Message("system", system)] + user_messages
        messages = [message.to_dict() for message in messages]

        try:
            if response_format is None:
                response = self.client.chat.completions.create(
                    model=self.model, messages=messages, temperature=0, seed=self.seed
                )
            else:
                response = self.client.beta.chat.completions.parse(
                    model=self.model, messages=messages, temperature=0, seed=self.seed,
                    response_format=response_format
                )
        except openai.OpenAIError as e:
            raise ProviderError(f"OpenAI request failed: {e}") from e

        if response.choices is None or len(response.choices) == 0:
            raise ProviderError("No response received from OpenAI")

        message = response.choices[0].message
        reply = message.parsed if response_format is not None else message.content
        if reply is None:
            refusal = getattr(message, "refusal", None)
            raise ProviderError(f"OpenAI returned no usable reply: {refusal or 'empty message'}")
        return reply if response_format is not None else reply.strip()


def _client() -> OpenAI:
    api_key = os.getenv('OPENAI_API_KEY')
    if not api_key:
        raise ProviderError("OPENAI_API_KEY is not set")
    return OpenAI(api_key=api_key)


class OpenAIUnifier(InstructionUnifier):
    """LLM-backed unifier; replies are memoized so unify is idempotent within a run."""

    def __init__(self, prompt: Prompt) -> None:
        self.prompt = prompt
        self._cache: dict[str, str] = {}

    def unify(self, instruction: str) -> str:
        if not instruction or not instruction.strip():
            raise RangeError("Instruction must be a non-empty string")
        if instruction not in self._cache:
            unified = self.prompt.prompt(Prompt.UNIFY_PROMPT, [Message("user", instruction)])
            self._cache[instruction] = unified
            self._cache.setdefault(unified, unified)
        return self._cache[instruction]

    def filter_classes(self, class_names: list[str], selected: list[str]) -> list[str]:
        if not class_names or not selected:
            return []
        request = f"classes: {', '.join(class_names)}\ncategories: {', '.join(selected)}"
        selection: ClassSelection = self.prompt.prompt(
            Prompt.FILTER_PROMPT, [Message("user", request)], response_format=ClassSelection
        )
        chosen = set(selection.classes)
        return [name for name in class_names if name in chosen]


class OpenAIPromptGenerator(PromptGenerator):
    def __init__(self, prompt: Prompt) -> None:
        self.prompt = prompt

    def generate(self, seed: int) -> GroupDraft:
        request = Message("user", f"Write edit group number {seed}.")
        return self.prompt.prompt(Prompt.GROUP_PROMPT, [request], response_format=GroupDraft)


@register_adapter("unifier", "openai")
def openai_unifier(cfg) -> OpenAIUnifier:
    return OpenAIUnifier(Prompt(_client(), model=cfg.llm_model, seed=cfg.llm_seed))


@register_adapter("promptgen", "openai")
def openai_prompt_generator(cfg) -> OpenAIPromptGenerator:
    return OpenAIPromptGenerator(Prompt(_client(), model=cfg.llm_model, seed=cfg.llm_seed))
