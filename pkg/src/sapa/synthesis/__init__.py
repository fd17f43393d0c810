from sapa.synthesis.backends import BackendError, HttpBackend, MockBackend, SynthesisBackend
from sapa.synthesis.parsing import (
    LatentProfile,
    Persona,
    RetryableParseError,
    fallback_persona,
    fallback_profile,
    parse_latent_scores,
    parse_persona,
)
from sapa.synthesis.prompts import PromptPair, render_latent_prompt, render_persona_prompt
from sapa.synthesis.runner import (
    ResponseCache,
    SynthesisResult,
    read_personas,
    read_profiles,
    synthesize_all,
    write_failures,
    write_personas,
    write_profiles,
)

__all__ = [
    "BackendError",
    "HttpBackend",
    "LatentProfile",
    "MockBackend",
    "Persona",
    "PromptPair",
    "ResponseCache",
    "RetryableParseError",
    "SynthesisBackend",
    "SynthesisResult",
    "fallback_persona",
    "fallback_profile",
    "parse_latent_scores",
    "parse_persona",
    "read_personas",
    "read_profiles",
    "render_latent_prompt",
    "render_persona_prompt",
    "synthesize_all",
    "write_failures",
    "write_personas",
    "write_profiles",
]
