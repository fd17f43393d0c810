"""Tolerant extraction and validation of persona / latent-score responses."""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

from sapa.dimensions import LATENT_DIMENSIONS, canonical_dimension

PERSONA_KEYS = ("primary_motivation", "behavioral_tags", "brief_justification")
MAX_TAGS = 10
MOTIVATION_WORDS = 5
JUSTIFICATION_WORDS = 25


class RetryableParseError(ValueError):
    """The response could not be turned into a valid object; asking again may help."""


@dataclass(frozen=True)
class Persona:
    person_id: str
    primary_motivation: str
    behavioral_tags: tuple
    brief_justification: str
    raw_response: str = ""
    # soft limits from the prompt that the response exceeded
    notes: tuple = field(default=())
    fallback: bool = False


@dataclass(frozen=True)
class LatentProfile:
    person_id: str
    scores: dict
    justifications: dict = field(default_factory=dict)
    fallback: bool = False

    def vector(self):
        return [self.scores[d] for d in LATENT_DIMENSIONS]


def fallback_persona(person_id):
    return Persona(person_id, "", (), "", "", (), True)


def fallback_profile(person_id):
    return LatentProfile(person_id, {d: 5 for d in LATENT_DIMENSIONS}, {}, True)


_FENCE = re.compile(r"```[a-zA-Z0-9_-]*")


def extract_json_object(raw):
    """First well-formed JSON object in ``raw``, ignoring prose and code fences."""
    if not isinstance(raw, str):
        try:
            raw = raw.decode("utf-8", errors="replace")
        except AttributeError:
            raise RetryableParseError("response is not text") from None
    text = _FENCE.sub("", raw)
    decoder = json.JSONDecoder()
    pos = text.find("{")
    while pos != -1:
        try:
            obj, _ = decoder.raw_decode(text, pos)
        except (ValueError, RecursionError):
            obj = None
        if isinstance(obj, dict):
            return obj
        pos = text.find("{", pos + 1)
    raise RetryableParseError("no JSON object found in response")


def normalize_tags(tags):
    if isinstance(tags, str):
        tags = tags.split(",")
    if not isinstance(tags, (list, tuple)):
        raise RetryableParseError("behavioral_tags must be a list")
    out = []
    for tag in tags:
        if not isinstance(tag, (str, int, float)) or isinstance(tag, bool):
            raise RetryableParseError("behavioral_tags must contain strings")
        norm = " ".join(str(tag).strip().lower().split())
        if norm and norm not in out:
            out.append(norm)
    if not out:
        raise RetryableParseError("behavioral_tags is empty")
    return tuple(out[:MAX_TAGS])


def parse_persona(raw, person_id) -> Persona:
    obj = extract_json_object(raw)
    for key in PERSONA_KEYS:
        if key not in obj:
            raise RetryableParseError(f"missing key {key!r}")
    motivation = obj["primary_motivation"]
    justification = obj["brief_justification"]
    if not isinstance(motivation, str) or not motivation.strip():
        raise RetryableParseError("primary_motivation must be a non-empty string")
    if not isinstance(justification, str) or not justification.strip():
        raise RetryableParseError("brief_justification must be a non-empty string")
    tags = normalize_tags(obj["behavioral_tags"])
    notes = []
    if len(motivation.split()) > MOTIVATION_WORDS:
        notes.append("motivation_over_length")
    if len(justification.split()) > JUSTIFICATION_WORDS:
        notes.append("justification_over_length")
    return Persona(
        person_id=str(person_id),
        primary_motivation=motivation.strip(),
        behavioral_tags=tags,
        brief_justification=justification.strip(),
        raw_response=raw if isinstance(raw, str) else str(raw),
        notes=tuple(notes),
    )


_NUMBER = re.compile(r"^\s*(-?\d+(?:\.\d+)?)")


def coerce_score(value, dim):
    if isinstance(value, dict):
        for key in ("score", "value", "rating"):
            if key in value:
                return coerce_score(value[key], dim)
        raise RetryableParseError(f"no score for {dim}")
    if isinstance(value, bool):
        raise RetryableParseError(f"boolean score for {dim}")
    if isinstance(value, str):
        m = _NUMBER.match(value)
        if not m:
            raise RetryableParseError(f"non-numeric score for {dim}: {value!r}")
        value = float(m.group(1))
    if not isinstance(value, (int, float)) or not math.isfinite(value):
        raise RetryableParseError(f"non-numeric score for {dim}")
    nearest = round(value)
    if abs(value - nearest) > 0.01:
        raise RetryableParseError(f"non-integer score {value} for {dim}")
    if not 1 <= nearest <= 10:
        raise RetryableParseError(f"score {value} for {dim} outside [1, 10]")
    return int(nearest)


def _justification_of(value):
    if isinstance(value, dict):
        for key in ("justification", "reason", "rationale", "explanation"):
            if isinstance(value.get(key), str):
                return value[key]
    return ""


def parse_latent_scores(raw, person_id) -> LatentProfile:
    """Accepts {display name: score | {score, justification}}, a
    {"scores": {...}, "justifications": {...}} pair, or a list of
    {"dimension", "score"} entries under any single key."""
    obj = extract_json_object(raw)
    scores, reasons = {}, {}

    def take(name, value, reason=""):
        key = canonical_dimension(name)
        if key is None:
            return
        if key in scores:
            raise RetryableParseError(f"dimension {key} given twice")
        scores[key] = coerce_score(value, key)
        reasons[key] = reason or _justification_of(value)

    if isinstance(obj.get("scores"), dict):
        just = obj.get("justifications") if isinstance(obj.get("justifications"), dict) else {}
        just = {canonical_dimension(k): v for k, v in just.items() if isinstance(v, str)}
        for name, value in obj["scores"].items():
            take(name, value, just.get(canonical_dimension(name), ""))
    else:
        for name, value in obj.items():
            if isinstance(value, list):
                for item in value:
                    if isinstance(item, dict) and "dimension" in item:
                        take(item["dimension"], item, _justification_of(item))
            else:
                take(name, value)

    missing = [d for d in LATENT_DIMENSIONS if d not in scores]
    if missing:
        raise RetryableParseError(f"missing dimensions: {missing}")
    return LatentProfile(str(person_id), {d: scores[d] for d in LATENT_DIMENSIONS},
                         {d: reasons.get(d, "") for d in LATENT_DIMENSIONS})
