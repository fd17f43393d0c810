"""Persona and latent-scoring prompt templates and their rendering."""
from __future__ import annotations

import json
from dataclasses import dataclass

PERSONA_TEMPERATURE = 0.7
LATENT_TEMPERATURE = 0.3

PERSONA_SYSTEM = (
    "You are an expert cognitive behavioral analyst. Your task is to analyze a traveler's profile to infer "
    "their likely travel behavior and motivations. Focus on clues that might reveal underlying attitudes "
    "related to time, cost, technology, and transportation preferences.\n"
    "\n"
    "You must provide your output *only* as a single, strictly valid JSON object with three specific keys: "
    "'primary_motivation', 'behavioral_tags', and 'brief_justification'. Do not add any conversational text "
    "or markdown formatting around the JSON object."
)

PERSONA_USER = """Analyze the provided traveler data. Based on this data, distill the agent's persona into its core components and provide the output as a single-line, strictly valid JSON object.

**INPUT DATA:**
* **Socio-Demographics:** {socio_demographics}
* **Home Environment Profile:** {spatial_profile_label}
* **Spatial Context Vector:** {spatial_embeddings_json}

**YOUR TASK:**
Return a single JSON object with the following structure:
{{
  "primary_motivation": "[A concise phrase (max 5 words) describing the main driver for this person's travel choices]",
  "behavioral_tags": ["[A list of 3-5 relevant keyword tags]", "[tag2]", "..."],
  "brief_justification": "[A single sentence (max 25 words) explaining your reasoning]"
}}"""

LATENT_USER = """**TASK:** Read the following traveler profile. For each of the seven behavioral dimensions, assign a score from 1 to 10 based on the provided scoring guide.

**SCORING GUIDE:**
- **Time Sensitivity:** 1 = Highly patient, willing to wait for cheaper options. 5 = Balances time and cost. 10 = Prioritizes speed above all else, willing to pay for it.
- **Cost Sensitivity:** 1 = Spends freely for convenience/speed. 5 = Balances cost and other factors. 10 = Exclusively seeks the cheapest option.
- **Tech Affinity:** 1 = Avoids technology and apps. 5 = Uses common apps but not an early adopter. 10 = Eagerly adopts new technology and app-based services.
- **Pro Car Attitude:** 1 = Prefers any mode over driving. 5 = Views car as one of many options. 10 = Exclusively prefers the privacy and control of a personal car.
- **Environmental Concern:** 1 = Unconcerned with environmental impact. 5 = Aware of impact but prioritizes other factors. 10 = Actively chooses sustainable/eco-friendly options.
- **Convenience/Comfort Seeking:** 1 = Tolerates inconvenience for cost/speed. 5 = Appreciates convenience but makes trade-offs. 10 = Main motivation is the easiest, most comfortable travel.
- **Spontaneity:** 1 = Plans all trips far in advance. 5 = Plans most trips but can be spontaneous. 10 = Makes unplanned, last-minute travel decisions.

---
**EXAMPLE:** ... (example omitted for brevity)
---

**YOUR TASK:**
**INPUT PROFILE:**
- Primary Motivation: {motivation}
- Behavioral Tags: {tags}
- Brief Justification: {justification}
**OUTPUT:** (JSON object with scores and justifications for all 7 dimensions)"""


@dataclass(frozen=True)
class PromptPair:
    system_text: str
    user_text: str
    temperature: float
    purpose: str  # "persona" | "latent"

    def __post_init__(self):
        if self.purpose not in ("persona", "latent"):
            raise ValueError(f"unknown prompt purpose {self.purpose!r}")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")

    def digest_bytes(self):
        return f"{self.purpose}\x00{self.temperature!r}\x00{self.system_text}\x00{self.user_text}".encode("utf-8")


def _round_component(v):
    r = round(float(v), 3)
    return 0.0 if r == 0 else r


def serialize_demographics(demographics):
    return json.dumps(demographics, sort_keys=True, ensure_ascii=False, default=str)


def serialize_embedding(vector):
    return json.dumps([_round_component(v) for v in vector])


def render_persona_prompt(traveler, temperature=PERSONA_TEMPERATURE) -> PromptPair:
    user = PERSONA_USER.format(
        socio_demographics=serialize_demographics(traveler.socio_demographics),
        spatial_profile_label=traveler.spatial_profile_label,
        spatial_embeddings_json=serialize_embedding(traveler.spatial_embedding),
    )
    return PromptPair(PERSONA_SYSTEM, user, temperature, "persona")


def render_latent_prompt(persona, temperature=LATENT_TEMPERATURE) -> PromptPair:
    user = LATENT_USER.format(
        motivation=persona.primary_motivation,
        tags=", ".join(persona.behavioral_tags),
        justification=persona.brief_justification,
    )
    return PromptPair("", user, temperature, "latent")
