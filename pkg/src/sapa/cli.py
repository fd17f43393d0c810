"""Command-line entry point: ``sapa <command>``.

Commands call the core package directly; ``sapa serve`` starts the HTTP
service for remote use.
"""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from sapa import __version__


def _backend(kind, model, base_url, truth, noise, seed, malformed_rate):
    from sapa.pipeline import make_backend
    from sapa.synthgen import read_truth

    noise_value = noise if noise == "shuffled" else float(noise)
    return make_backend({"backend": kind, "model": model, "base_url": base_url, "noise_sigma": noise_value,
                         "seed": seed, "malformed_rate": malformed_rate},
                        read_truth(truth) if truth else None)


def backend_options(fn):
    opts = [
        click.option("--backend", type=click.Choice(["http", "mock", "oracle"]), default="oracle", show_default=True),
        click.option("--model", default=None, help="Chat model name (http backend)."),
        click.option("--base-url", default="https://api.openai.com/v1", show_default=True),
        click.option("--truth", type=click.Path(exists=True, file_okay=False), default=None,
                     help="Ground-truth directory from `sapa synth` (oracle backend)."),
        click.option("--noise", default="0", show_default=True, help="Oracle noise sigma, or 'shuffled'."),
        click.option("--malformed-rate", type=float, default=0.0, show_default=True),
        click.option("--backend-seed", type=int, default=0, show_default=True),
        click.option("--concurrency", type=int, default=1, show_default=True),
        click.option("--cache", type=click.Path(dir_okay=False), default=None, help="JSON-lines response cache."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", is_flag=True)
def main(verbose):
    """Two-stage rare-choice prediction with synthesized latent attitudes."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def synth(config, seed, out):
    """Generate a synthetic survey population (tables/, embeddings.csv, truth/)."""
    from sapa.synthgen import SynthConfig, generate_population, write_population

    cfg = SynthConfig.load(config) if config else SynthConfig()
    if seed is not None:
        cfg.seed = seed
    bundle, truth, emb = generate_population(cfg)
    write_population(bundle, truth, emb, out)
    h, p, t = bundle.counts()
    click.echo(f"wrote {h} households, {p} persons, {t} trips to {out}; "
               f"trip rate {truth.realized_trip_rate:.4f}, ever-user rate {truth.realized_ever_rate:.4f}")


@main.command()
@click.option("--tables", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--embeddings", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--schema", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--split", "split_file", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Fit imputation on this split's training persons only.")
@click.option("--out", type=click.Path(file_okay=False), required=True)
def ingest(tables, embeddings, schema, split_file, out):
    """Load survey tables into travelers.csv / trips.csv."""
    from sapa.ingest import (SchemaConfig, build_traveler_records, engineer_observables, load_survey,
                             read_embeddings, write_records)
    from sapa.split import read_split

    sc = SchemaConfig.load(schema)
    bundle = load_survey(tables, sc)
    emb = read_embeddings(embeddings) if embeddings else None
    travelers = build_traveler_records(bundle, emb, ridesourcing_modes=sc.ridesourcing_modes,
                                       embedding_dim=len(next(iter(emb.values()))) if emb else 128)
    train_ids = read_split(split_file)[0].train if split_file else None
    if train_ids is None:
        click.echo("note: no --split given; imputation statistics use every trip", err=True)
    trips, imputation = engineer_observables(bundle, train_person_ids=train_ids, embeddings=emb,
                                             ridesourcing_modes=sc.ridesourcing_modes)
    write_records(out, travelers, trips, imputation, bundle.load_report)
    click.echo(f"{len(travelers)} travelers, {len(trips)} trips -> {out}")


@main.command()
@click.option("--travelers", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--test-fraction", type=float, default=0.2, show_default=True)
@click.option("--strata", default="ever,spatial,year", show_default=True)
@click.option("--k", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def split(travelers, test_fraction, strata, k, seed, out):
    """Person-level stratified train/test split plus k folds over training persons."""
    from sapa.ingest import read_travelers
    from sapa.split import assign_split, grouped_kfold, write_split

    people = read_travelers(travelers)
    sa = assign_split(people, test_fraction, tuple(s for s in strata.split(",") if s), seed)
    train = set(sa.train)
    folds = grouped_kfold([p for p in people if p.person_id in train], k, seed)
    write_split(sa, out, folds)
    for w in sa.warnings:
        click.echo(f"warning: {w}", err=True)
    click.echo(f"train {len(sa.train)} / test {len(sa.test)} persons, {k} folds -> {out}")


def _run_synthesis(travelers, stages, personas, opts):
    from sapa.ingest import read_travelers
    from sapa.synthesis import synthesize_all

    people = read_travelers(travelers)
    backend = _backend(opts["backend"], opts["model"], opts["base_url"], opts["truth"], opts["noise"],
                       opts["backend_seed"], opts["malformed_rate"])
    return synthesize_all(people, backend, opts["cache"], opts["concurrency"], stages=stages, personas=personas)


@main.command()
@click.option("--travelers", type=click.Path(exists=True, dir_okay=False), required=True)
@backend_options
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="personas.jsonl")
def personas(travelers, out, **opts):
    """Generate one persona per traveler."""
    from sapa.synthesis.runner import write_failures, write_personas

    res = _run_synthesis(travelers, ("persona",), None, opts)
    write_personas(res.personas, out)
    if res.failures:
        write_failures(res.failures, str(out) + ".failures.jsonl")
    click.echo(f"{len(res.personas)} personas ({res.cache_hits} cached, {res.backend_calls} calls, "
               f"{len(res.failures)} failures) -> {out}")


@main.command("score-latents")
@click.option("--travelers", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--personas", "personas_file", type=click.Path(exists=True, dir_okay=False), required=True)
@backend_options
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="profiles.csv")
def score_latents(travelers, personas_file, out, **opts):
    """Score the seven latent attitudes from each persona."""
    from sapa.synthesis.runner import read_personas, write_failures, write_profiles

    res = _run_synthesis(travelers, ("latent",), read_personas(personas_file), opts)
    write_profiles(res.profiles, out)
    if res.failures:
        write_failures(res.failures, str(out) + ".failures.jsonl")
    click.echo(f"{len(res.profiles)} profiles ({len(res.failures)} failures) -> {out}")


@main.command("train-propensity")
@click.option("--travelers", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--split", "split_file", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--personas", "personas_file", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--llm-features", type=click.Choice(["on", "off"]), default="on", show_default=True)
@click.option("--propensity-mode", type=click.Choice(["crossfit", "insample"]), default="crossfit",
              show_default=True)
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def train_propensity_cmd(travelers, split_file, personas_file, llm_features, propensity_mode, seed, out):
    """Stage 1: cross-fitted propensity scores plus an evaluation report."""
    from sapa.ingest import read_travelers
    from sapa.learners import to_json
    from sapa.propensity import (PropensityConfig, crossfit_propensity, format_propensity_report,
                                 train_propensity, write_scores)
    from sapa.split import read_split
    from sapa.synthesis.runner import read_personas

    people = read_travelers(travelers)
    sa, folds = read_split(split_file)
    if folds is None:
        raise click.UsageError("split file has no fold column; re-run `sapa split`")
    use_llm = llm_features == "on"
    if use_llm and not personas_file:
        raise click.UsageError("--llm-features on needs --personas")
    pers = read_personas(personas_file) if personas_file else None
    cfg = PropensityConfig(use_llm_features=use_llm, seed=seed)
    by_id = {p.person_id: p for p in people}
    model, report = train_propensity([by_id[p] for p in sa.train], cfg, pers, [by_id[p] for p in sa.test])
    scores = crossfit_propensity(people, sa, folds, cfg, pers, propensity_mode)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_scores(scores, out / "propensity_scores.csv")
    (out / "propensity_model.json").write_text(to_json(model.model), encoding="utf-8")
    (out / "propensity_report.json").write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
    text = format_propensity_report(report)
    (out / "propensity_report.txt").write_text(text, encoding="utf-8")
    click.echo(text, nl=False)


@main.command("build-features")
@click.option("--trips", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--propensity", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--profiles", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--scenario", default="full_all_interactions", show_default=True)
@click.option("--standardize", is_flag=True, help="z-score columns after building interactions.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def build_features(trips, propensity, profiles, scenario, standardize, out):
    """Assemble the Stage-2 design matrix for one scenario."""
    from sapa.features import assemble_stage2
    from sapa.ingest import read_trips
    from sapa.propensity import read_scores
    from sapa.synthesis.runner import read_profiles

    fm = assemble_stage2(read_trips(trips), read_scores(propensity) if propensity else {},
                         read_profiles(profiles) if profiles else {}, scenario, standardize=standardize)
    fm.write(out)
    click.echo(f"{len(fm.row_ids)} rows x {len(fm.columns)} columns ({scenario}) -> {out}")


@main.command()
@click.option("--features", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--split", "split_file", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--learner", type=click.Choice(["gbdt", "forest"]), default="gbdt", show_default=True)
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="model JSON")
def train(features, split_file, learner, seed, out):
    """Train a Stage-2 model on training persons and evaluate on test persons."""
    import numpy as np

    from sapa.features import FeatureMatrix
    from sapa.harness import _learner_params
    from sapa.learners import raw_scores, to_json
    from sapa.learners import train as fit
    from sapa.metrics import classification_metrics
    from sapa.split import read_split

    fm = FeatureMatrix.read(features)
    sa, _ = read_split(split_file)
    part = np.array([sa.partition.get(p, "") for p in fm.person_ids])
    tr, te = part == "train", part == "test"
    model = fit(learner, fm.values[tr], fm.labels[tr], _learner_params(learner, None, seed), fm.columns)
    Path(out).write_text(to_json(model), encoding="utf-8")
    m = classification_metrics(fm.labels[te], raw_scores(model, fm.values[te]))
    click.echo(json.dumps(m.as_dict(), indent=2, sort_keys=True))


@main.command()
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def ablate(config, out):
    """Run the full pipeline and the ablation grid; writes report.json and tables."""
    from sapa.harness import AblationFailed, check_failures, emit_report, report_latent_profiles, write_segment_profiles
    from sapa.pipeline import run_pipeline

    def progress(cell):
        status = f"{cell['metrics']['pr_auc']:.4f}" if cell["status"] == "ok" else "FAILED"
        click.echo(f"  {cell['scenario']:<24} {cell['classifier']:<7} fold {cell['fold']!s:<5} PR-AUC {status}",
                   err=True)

    res = run_pipeline(config, progress=progress)
    out = Path(out)
    emit_report(res.report, out, ("csv", "txt", "json"))
    rows = report_latent_profiles(res.travelers, res.synthesis.profiles,
                                  ("user_status", "age_group", "income", "vehicles"))
    write_segment_profiles(rows, out / "segment_profiles.csv")
    (out / "timings.json").write_text(json.dumps(res.timings, indent=2, sort_keys=True), encoding="utf-8")
    click.echo((out / "summary.txt").read_text(encoding="utf-8"), nl=False)
    try:
        check_failures(res.report)
    except AblationFailed as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


@main.command()
@click.option("--run", "run_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--format", "formats", default="csv,txt", show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Defaults to the run directory.")
def report(run_dir, formats, out):
    """Re-emit tables and summary from a stored report.json."""
    from sapa.harness import AblationReport, emit_report

    rep = AblationReport.from_json((Path(run_dir) / "report.json").read_text(encoding="utf-8"))
    for path in emit_report(rep, out or run_dir, tuple(f.strip() for f in formats.split(","))):
        click.echo(str(path))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port):
    """Start the HTTP service."""
    import uvicorn

    from sapa.service.app import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
