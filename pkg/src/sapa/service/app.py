"""HTTP front end over the core package."""
from __future__ import annotations

import json
import logging
import threading
import uuid

from fastapi import BackgroundTasks, FastAPI, HTTPException

from sapa import __version__
from sapa.dimensions import INTERACTIONS, LATENT_DIMENSIONS
from sapa.features import build_interactions
from sapa.ingest import TravelerRecord
from sapa.metrics import classification_metrics
from sapa.service.schemas import (
    AblationRequest,
    CompareRequest,
    CompareResponse,
    InteractionRequest,
    JobOut,
    LatentOut,
    MetricsRequest,
    MetricsResponse,
    ParseRequest,
    PersonaIn,
    PersonaOut,
    PromptOut,
    TravelerIn,
)
from sapa.stats import cohens_d_pooled, format_improvement, relative_improvement, wilcoxon_signed_rank
from sapa.synthesis import (
    Persona,
    RetryableParseError,
    parse_latent_scores,
    parse_persona,
    render_latent_prompt,
    render_persona_prompt,
)

log = logging.getLogger(__name__)


def _finite_or_none(v):
    return None if v != v else v


def create_app() -> FastAPI:
    app = FastAPI(title="sapa", version=__version__)
    jobs: dict[str, dict] = {}
    lock = threading.Lock()

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/metrics", response_model=MetricsResponse)
    def metrics(req: MetricsRequest):
        try:
            m = classification_metrics(req.labels, req.scores, req.threshold)
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from exc
        row = m.as_dict()
        row["pr_auc"] = _finite_or_none(row["pr_auc"])
        row["roc_auc"] = _finite_or_none(row["roc_auc"])
        row["flags"] = list(m.flags)
        return row

    @app.post("/stats/compare", response_model=CompareResponse)
    def compare(req: CompareRequest):
        try:
            p = wilcoxon_signed_rank(req.baseline, req.treatment, req.alternative)
            d = cohens_d_pooled(req.baseline, req.treatment)
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from exc
        base = sum(req.baseline) / len(req.baseline)
        treat = sum(req.treatment) / len(req.treatment)
        rel = relative_improvement(base, treat)
        return CompareResponse(wilcoxon_p=p, cohens_d=d, relative_improvement_pct=rel,
                               formatted=format_improvement(rel))

    @app.post("/synthesis/persona-prompt", response_model=PromptOut)
    def persona_prompt(traveler: TravelerIn):
        record = TravelerRecord(traveler.person_id, "", traveler.socio_demographics, traveler.spatial_profile_label,
                                tuple(traveler.spatial_embedding), False, 0)
        p = render_persona_prompt(record)
        return PromptOut(purpose=p.purpose, temperature=p.temperature, system_text=p.system_text,
                         user_text=p.user_text)

    @app.post("/synthesis/latent-prompt", response_model=PromptOut)
    def latent_prompt(persona: PersonaIn):
        p = render_latent_prompt(Persona(persona.person_id, persona.primary_motivation,
                                         tuple(persona.behavioral_tags), persona.brief_justification))
        return PromptOut(purpose=p.purpose, temperature=p.temperature, system_text=p.system_text,
                         user_text=p.user_text)

    @app.post("/synthesis/parse-persona", response_model=PersonaOut)
    def parse_persona_route(req: ParseRequest):
        try:
            p = parse_persona(req.raw, req.person_id)
        except RetryableParseError as exc:
            raise HTTPException(422, str(exc)) from exc
        return PersonaOut(person_id=p.person_id, primary_motivation=p.primary_motivation,
                          behavioral_tags=list(p.behavioral_tags), brief_justification=p.brief_justification,
                          notes=list(p.notes))

    @app.post("/synthesis/parse-latent", response_model=LatentOut)
    def parse_latent_route(req: ParseRequest):
        try:
            prof = parse_latent_scores(req.raw, req.person_id)
        except RetryableParseError as exc:
            raise HTTPException(422, str(exc)) from exc
        return LatentOut(person_id=prof.person_id, scores=prof.scores, justifications=prof.justifications)

    @app.post("/features/interactions")
    def interactions(req: InteractionRequest):
        missing = [d for d in LATENT_DIMENSIONS if d not in req.scores]
        missing += [op for _, _, op in INTERACTIONS if op not in req.trip]
        if missing:
            raise HTTPException(422, f"missing fields: {missing}")
        return build_interactions(req.scores, req.trip)

    def _run_job(job_id, config):
        from sapa.harness import summary_text
        from sapa.pipeline import run_pipeline

        with lock:
            jobs[job_id]["status"] = "running"
        try:
            result = run_pipeline(config)
            with lock:
                jobs[job_id].update(status="done", summary=summary_text(result.report),
                                    report=json.loads(result.report.to_json()))
        except Exception as exc:
            log.exception("ablation job %s failed", job_id)
            with lock:
                jobs[job_id].update(status="failed", error=f"{type(exc).__name__}: {exc}")

    @app.post("/ablations", response_model=JobOut, status_code=202)
    def submit_ablation(req: AblationRequest, background: BackgroundTasks):
        from sapa.pipeline import load_config

        try:
            load_config(req.config)
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from exc
        job_id = uuid.uuid4().hex[:12]
        with lock:
            jobs[job_id] = {"job_id": job_id, "status": "queued"}
        background.add_task(_run_job, job_id, req.config)
        return JobOut(job_id=job_id, status="queued")

    @app.get("/ablations/{job_id}", response_model=JobOut)
    def get_ablation(job_id: str):
        with lock:
            job = jobs.get(job_id)
            if job is None:
                raise HTTPException(404, f"unknown job {job_id}")
            return JobOut(**job)

    return app


app = create_app()
