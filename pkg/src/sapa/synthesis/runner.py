"""Cache-first persona generation and latent scoring over a traveler population."""
from __future__ import annotations

import hashlib
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from sapa.synthesis.backends import BackendError
from sapa.synthesis.parsing import (
    RetryableParseError,
    fallback_persona,
    fallback_profile,
    parse_latent_scores,
    parse_persona,
)
from sapa.synthesis.prompts import (
    LATENT_TEMPERATURE,
    PERSONA_TEMPERATURE,
    render_latent_prompt,
    render_persona_prompt,
)

log = logging.getLogger(__name__)


class ResponseCache:
    """Append-only JSON-lines store of raw responses keyed by person, prompt hash and backend.

    Lines that fail to decode, or whose stored response no longer parses, are
    ignored so the entry is regenerated.
    """

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self._entries = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    try:
                        rec = json.loads(line)
                        self._entries[rec["key"]] = rec["raw"]
                    except (ValueError, KeyError, TypeError):
                        continue

    @staticmethod
    def key(person_id, purpose, prompt, backend_id):
        digest = hashlib.sha256(prompt.digest_bytes()).hexdigest()
        return f"{person_id}|{purpose}|{digest}|{backend_id}"

    def get(self, key):
        return self._entries.get(key)

    def put(self, key, record):
        with self._lock:
            self._entries[key] = record["raw"]
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"key": key, **record}, sort_keys=True) + "\n")

    def __len__(self):
        return len(self._entries)


@dataclass
class SynthesisResult:
    personas: dict
    profiles: dict
    failures: list = field(default_factory=list)
    backend_calls: int = 0
    cache_hits: int = 0

    def failure_rate(self):
        n = len(self.profiles)
        return len({f["person_id"] for f in self.failures}) / n if n else 0.0


class _Counter:
    def __init__(self):
        self.calls = 0
        self.hits = 0
        self._lock = threading.Lock()

    def add(self, calls=0, hits=0):
        with self._lock:
            self.calls += calls
            self.hits += hits


def _ask(person_id, prompt, parse, backend, cache, retries, counter):
    """Return (parsed object or None, error text or None, attempts)."""
    key = ResponseCache.key(person_id, prompt.purpose, prompt, backend.backend_id)
    cached = cache.get(key)
    if cached is not None:
        try:
            obj = parse(cached, person_id)
            counter.add(hits=1)
            return obj, None, 0
        except RetryableParseError:
            log.info("ignoring unusable cache entry for %s/%s", person_id, prompt.purpose)
    error = None
    for attempt in range(1, retries + 2):
        counter.add(calls=1)
        try:
            raw = backend.chat(prompt, person_id=person_id)
        except BackendError as exc:
            return None, f"transport: {exc}", attempt
        try:
            obj = parse(raw, person_id)
        except RetryableParseError as exc:
            error = f"parse: {exc}"
            continue
        cache.put(key, {"person_id": person_id, "purpose": prompt.purpose, "backend": backend.backend_id,
                        "raw": raw})
        return obj, None, attempt
    return None, error, retries + 1


def synthesize_all(travelers, backend, cache=None, concurrency=1, retries=3,
                   persona_temperature=PERSONA_TEMPERATURE, latent_temperature=LATENT_TEMPERATURE,
                   stages=("persona", "latent"), personas=None) -> SynthesisResult:
    """Personas then latent scores for every traveler.

    Failed persons receive the neutral fallback persona/profile and a row in
    ``failures``.  Output maps are keyed and ordered by person_id, so they do
    not depend on completion order or ``concurrency``.
    """
    store = cache if isinstance(cache, ResponseCache) else ResponseCache(cache)
    counter = _Counter()
    given = dict(personas or {})

    def work(traveler):
        pid = traveler.person_id
        failures = []
        persona = given.get(pid)
        if persona is None:
            if "persona" in stages:
                prompt = render_persona_prompt(traveler, persona_temperature)
                persona, err, attempts = _ask(pid, prompt, parse_persona, backend, store, retries, counter)
                if persona is None:
                    failures.append({"person_id": pid, "purpose": "persona", "attempts": attempts, "error": err})
                    persona = fallback_persona(pid)
            else:
                persona = fallback_persona(pid)
        profile = None
        if "latent" in stages:
            if persona.fallback:
                profile = fallback_profile(pid)
                failures.append({"person_id": pid, "purpose": "latent", "attempts": 0,
                                 "error": "persona unavailable"})
            else:
                prompt = render_latent_prompt(persona, latent_temperature)
                profile, err, attempts = _ask(pid, prompt, parse_latent_scores, backend, store, retries, counter)
                if profile is None:
                    failures.append({"person_id": pid, "purpose": "latent", "attempts": attempts, "error": err})
                    profile = fallback_profile(pid)
        return pid, persona, profile, failures

    if concurrency <= 1:
        results = [work(t) for t in travelers]
    else:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            results = list(pool.map(work, travelers))

    results.sort(key=lambda r: str(r[0]))
    out_personas, out_profiles, failures = {}, {}, []
    for pid, persona, profile, fails in results:
        out_personas[pid] = persona
        if profile is not None:
            out_profiles[pid] = profile
        failures.extend(fails)
    if failures:
        log.warning("%d synthesis failures across %d persons", len(failures),
                    len({f["person_id"] for f in failures}))
    return SynthesisResult(out_personas, out_profiles, failures, counter.calls, counter.hits)


# ----------------------------------------------------------------- file formats


def write_personas(personas, path):
    with open(path, "w", encoding="utf-8") as fh:
        for pid in sorted(personas, key=str):
            p = personas[pid]
            fh.write(json.dumps({
                "person_id": p.person_id,
                "primary_motivation": p.primary_motivation,
                "behavioral_tags": list(p.behavioral_tags),
                "brief_justification": p.brief_justification,
                "fallback": p.fallback,
            }, sort_keys=True) + "\n")


def read_personas(path):
    from sapa.synthesis.parsing import Persona

    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            out[rec["person_id"]] = Persona(rec["person_id"], rec["primary_motivation"],
                                            tuple(rec["behavioral_tags"]), rec["brief_justification"],
                                            fallback=rec.get("fallback", False))
    return out


def write_profiles(profiles, path):
    from sapa.dimensions import LATENT_DIMENSIONS

    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(["person_id", *LATENT_DIMENSIONS, "fallback"]) + "\n")
        for pid in sorted(profiles, key=str):
            p = profiles[pid]
            fh.write(",".join([pid, *[str(p.scores[d]) for d in LATENT_DIMENSIONS], str(int(p.fallback))]) + "\n")


def read_profiles(path):
    import csv

    from sapa.dimensions import LATENT_DIMENSIONS
    from sapa.synthesis.parsing import LatentProfile

    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[row["person_id"]] = LatentProfile(row["person_id"], {d: int(row[d]) for d in LATENT_DIMENSIONS},
                                                  fallback=row.get("fallback") == "1")
    return out


def write_failures(failures, path):
    with open(path, "w", encoding="utf-8") as fh:
        for f in failures:
            fh.write(json.dumps(f, sort_keys=True) + "\n")
