from apf.llm.client import ChatProvider, HttpChatClient, ProviderConfig, RetryPolicy, complete
from apf.llm.mock import MockProvider
from apf.llm.parsing import (
    AnnotationResult,
    extract_json,
    generation_payload,
    parse_annotation_response,
    parse_generation_response,
    parse_paraphrase_response,
    serialize_order,
)
from apf.llm.prompts import (
    Prompt,
    PromptKind,
    SectionTag,
    build_annotation_prompt,
    build_generation_prompt,
    build_paraphrase_prompt,
)

__all__ = [
    "AnnotationResult",
    "ChatProvider",
    "HttpChatClient",
    "MockProvider",
    "Prompt",
    "PromptKind",
    "ProviderConfig",
    "RetryPolicy",
    "SectionTag",
    "build_annotation_prompt",
    "build_generation_prompt",
    "build_paraphrase_prompt",
    "complete",
    "extract_json",
    "generation_payload",
    "parse_annotation_response",
    "parse_generation_response",
    "parse_paraphrase_response",
    "serialize_order",
]
