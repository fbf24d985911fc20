"""
Command-line entry point. Each pipeline stage is a subcommand that reads the
previous stage's artifacts from the workdir and writes its own:

    compose -> ingest -> index -> match -> rank / evaluate / cost / report

Exit codes: 0 ok, 2 input error, 3 backend error, 4 partial results.
"""

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from pydantic import ValidationError

from matcher.artifacts import (
    Workdir, atomic_write, dumps_json, dumps_jsonl, dumps_scores, file_hash,
    load_manifest, load_scores, write_manifest
)
from matcher.composer import CONCEPT_TIERS, compose_trial, load_trial, serialize_trial
from matcher.config import (
    PipelineConfig, load_config, make_classifier, make_embedder, make_generator, make_qa_backend
)
from matcher.database import RunLedger, ledger_url
from matcher.engine import MatchEngine, PairOutcome
from matcher.note_store import (
    build_corpus, chunks_by_patient, dump_jsonl, load_chunks, load_headers, load_notes
)
from matcher.qa_engine import PatientContext, QaEngine, load_template
from matcher.reports import (
    cost_report, evaluate_answers, load_gold_answers, load_ground_truth,
    ranking_evaluation, ranking_metrics, render_report
)
from matcher.retriever import corpus_hash, index_chunks, load_index, serialize_index
from shared.errors import ArtifactError, InputError, TrialMatchError
from shared.schemas import (
    QaRecord, RankDirection, RawTrial, RunManifest, ScoringMethod, TokenUsage, TrialSpec
)
from shared.scoring import rank_all
from shared.unique_ids import unique_id

logger = logging.getLogger("trial_matcher")
log_format = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')

EXIT_OK = 0
EXIT_PARTIAL = 4

# --- Logging Setup ---

def setup_logging(verbose: bool = False):
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    console_handler = logging.StreamHandler()
    console_handler.setFormatter(log_format)
    logger.addHandler(console_handler)

def attach_run_log(run_dir: Path) -> logging.Handler:
    run_dir.mkdir(parents=True, exist_ok=True)
    file_handler = logging.FileHandler(run_dir / "run.log", encoding="utf-8")
    file_handler.setFormatter(log_format)
    logger.addHandler(file_handler)
    return file_handler

def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")

# --- Shared loading helpers ---

def load_raw_trials(path: Path) -> List[RawTrial]:
    trials = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    trials.append(RawTrial(**json.loads(line)))
                except json.JSONDecodeError as e:
                    raise InputError(f"{path}:{lineno}: invalid JSON ({e.msg})")
                except (ValidationError, TypeError) as e:
                    raise InputError(f"{path}:{lineno}: invalid trial record ({e})")
    except FileNotFoundError:
        raise InputError(f"trials file not found: {path}")
    return trials

def load_trials(wd: Workdir, trial_ids: Optional[Sequence[str]] = None) -> Dict[str, TrialSpec]:
    trials = {}
    for path in wd.trial_files():
        try:
            spec = load_trial(path)
        except (json.JSONDecodeError, ValidationError) as e:
            raise ArtifactError(f"{path}: unreadable trial spec ({e})")
        trials[spec.trial_id] = spec
    if trial_ids:
        missing = sorted(set(trial_ids) - set(trials))
        if missing:
            raise InputError(f"unknown trial ids: {', '.join(missing)}")
        trials = {t: trials[t] for t in trial_ids}
    return trials

def require_headers(wd: Workdir):
    if not wd.headers_file.exists():
        raise ArtifactError(f"no patient headers at {wd.headers_file}; run ingest first")
    return load_headers(wd.headers_file)

def resolve_run(args, wd: Workdir, ledger: RunLedger) -> str:
    run_id = args.run_id
    if run_id is None:
        latest = ledger.latest_run()
        if latest is None:
            raise InputError("no runs recorded; run match first or pass --run-id")
        run_id = latest.id
    if not wd.run_dir(run_id).is_dir():
        raise InputError(f"unknown run id: {run_id}")
    return run_id

def load_outcomes(wd: Workdir, run_id: str) -> List[PairOutcome]:
    pair_dir = wd.run_dir(run_id) / "pairs"
    if not pair_dir.is_dir():
        return []
    outcomes = []
    for path in sorted(pair_dir.glob("*.json")):
        with open(path, "r", encoding="utf-8") as f:
            outcomes.append(PairOutcome(**json.load(f)))
    return outcomes

def load_answers(run_dir: Path) -> List[QaRecord]:
    path = run_dir / "answers.jsonl"
    if not path.exists():
        raise ArtifactError(f"no answers at {path}; run match first")
    with open(path, "r", encoding="utf-8") as f:
        return [QaRecord(**json.loads(line)) for line in f if line.strip()]

def record_artifact(run_dir: Path, name: str, sha: str):
    manifest = load_manifest(run_dir)
    if manifest is None:
        return
    manifest.artifacts[name] = sha
    write_manifest(run_dir, manifest)

# --- Commands ---

def cmd_compose(args, config: PipelineConfig, wd: Workdir) -> int:
    raws = load_raw_trials(Path(args.trials_file))
    out_dir = Path(args.out_dir) if args.out_dir else wd.trials
    if not raws:
        logger.info("No trials to compose")
        return EXIT_OK
    generator = make_generator(config)
    classifier = make_classifier(config)
    for raw in raws:
        spec = compose_trial(raw, generator, classifier, config.concept_tiers or CONCEPT_TIERS,
                             retries=config.generation_retries, max_in_flight=config.max_in_flight)
        atomic_write(out_dir / f"{spec.trial_id}.json", serialize_trial(spec))
    logger.info(f"Composed {len(raws)} trial(s) into {out_dir}")
    return EXIT_OK

def cmd_ingest(args, config: PipelineConfig, wd: Workdir) -> int:
    notes = load_notes(Path(args.notes_file))
    headers = load_headers(Path(args.headers_file))
    kwargs = {"max_tokens_per_chunk": config.chunk_max_tokens}
    if config.allowed_note_categories:
        kwargs["allowed_categories"] = config.allowed_note_categories
    if config.abbreviations:
        kwargs["abbreviations"] = config.abbreviations
    chunks = build_corpus(notes, headers, **kwargs)

    atomic_write(wd.chunks_file, dump_jsonl(chunks))
    atomic_write(wd.headers_file, dump_jsonl(headers[p] for p in sorted(headers)))
    logger.info(f"Ingested {len(notes)} notes for {len(headers)} patients into {len(chunks)} chunks")
    return EXIT_OK

def cmd_index(args, config: PipelineConfig, wd: Workdir) -> int:
    headers = require_headers(wd)
    grouped = chunks_by_patient(load_chunks(wd.chunks_file))
    embedder = make_embedder(config)
    for patient_id in sorted(headers):
        index = index_chunks(grouped.get(patient_id, []), embedder)
        atomic_write(wd.index_file(patient_id), serialize_index(index))
        logger.info(f"Indexed {len(index.entries)} chunks for {patient_id}")
    return EXIT_OK

def _patient_context(wd: Workdir, header, chunks, embedder) -> PatientContext:
    index = load_index(wd.index_file(header.patient_id))
    if index.provider_tag != embedder.tag:
        raise ArtifactError(f"index for {header.patient_id} built with {index.provider_tag}, "
                            f"configured embedder is {embedder.tag}; rerun index")
    if index.corpus_hash != corpus_hash(chunks):
        raise ArtifactError(f"index for {header.patient_id} is stale; rerun index")
    return PatientContext(header=header, chunks={c.chunk_id: c for c in chunks}, index=index)

def cmd_match(args, config: PipelineConfig, wd: Workdir) -> int:
    headers = require_headers(wd)
    patient_ids = args.patients or sorted(headers)
    missing = sorted(set(patient_ids) - set(headers))
    if missing:
        raise InputError(f"unknown patient ids: {', '.join(missing)}")
    trials = load_trials(wd, args.trials)
    if not trials:
        raise InputError(f"no composed trials under {wd.trials}; run compose first")

    grouped = chunks_by_patient(load_chunks(wd.chunks_file))
    embedder = make_embedder(config)
    template = load_template(Path(config.prompt_template))
    qa_backend = make_qa_backend(config)
    qa = QaEngine(qa_backend, embedder, template, config.qa, k=config.retrieval_k,
                  max_in_flight=config.max_in_flight)
    engine = MatchEngine(config, qa)

    run_id = args.run_id or unique_id()
    run_dir = wd.run_dir(run_id)
    handler = attach_run_log(run_dir)
    ledger = RunLedger(ledger_url(wd.root))
    try:
        inputs = {"corpus/chunks.jsonl": file_hash(wd.chunks_file),
                  "corpus/headers.jsonl": file_hash(wd.headers_file),
                  "prompt_template": file_hash(Path(config.prompt_template))}
        for trial_id in sorted(trials):
            inputs[f"trials/{trial_id}.json"] = file_hash(wd.trials / f"{trial_id}.json")
        for patient_id in patient_ids:
            if not wd.index_file(patient_id).exists():
                raise ArtifactError(f"no index at {wd.index_file(patient_id)}; run index first")
            inputs[f"index/{patient_id}.json"] = file_hash(wd.index_file(patient_id))

        previous = load_manifest(run_dir)
        if previous and previous.input_hashes != inputs:
            changed = sorted(k for k in set(previous.input_hashes) | set(inputs)
                             if previous.input_hashes.get(k) != inputs.get(k))
            if config.deterministic:
                raise ArtifactError(f"inputs changed since run {run_id} started "
                                    f"({', '.join(changed)}); start a new run")
            logger.warning(f"Resuming {run_id} over changed inputs: {', '.join(changed)}")
        manifest = RunManifest(
            run_id=run_id, config=config.snapshot(), input_hashes=inputs,
            prompt_version=template.version,
            backend_tags={"qa": qa_backend.tag, "embedder": embedder.tag},
            started_at=previous.started_at if previous else _now(),
            artifacts=dict(previous.artifacts) if previous else {},
        )
        write_manifest(run_dir, manifest)
        ledger.start_run(run_id, manifest.started_at, manifest.model_dump(mode="json"))
        logger.info(f"Run {run_id}: {len(patient_ids)} patient(s) x {len(trials)} trial(s)")

        outcomes: List[PairOutcome] = []
        for patient_id in patient_ids:
            ctx = None
            for trial_id in sorted(trials):
                pair_path = wd.pair_file(run_id, patient_id, trial_id)
                if pair_path.exists():
                    with open(pair_path, "r", encoding="utf-8") as f:
                        done = PairOutcome(**json.load(f))
                    if done.complete:
                        logger.info(f"({patient_id}, {trial_id}) already complete; skipped")
                        outcomes.append(done)
                        continue
                if ctx is None:
                    ctx = _patient_context(wd, headers[patient_id], grouped.get(patient_id, []), embedder)
                outcome = engine.evaluate_pair(ctx, trials[trial_id])
                manifest.artifacts[f"pairs/{outcome.key}.json"] = atomic_write(
                    pair_path, dumps_json(outcome.model_dump(mode="json")))
                ledger.record_pair(run_id, patient_id, trial_id,
                                   "COMPLETE" if outcome.complete else "INCOMPLETE", outcome.error)
                outcomes.append(outcome)

        complete = [o for o in outcomes if o.complete]
        answers = sorted((r for o in complete for r in o.answers),
                         key=lambda r: (r.patient_id, r.question_id))
        evaluations = [
            {"patient_id": o.patient_id, "trial_id": o.trial_id, **e.model_dump(mode="json")}
            for o in sorted(complete, key=lambda o: (o.patient_id, o.trial_id)) for e in o.evaluations
        ]
        manifest.artifacts["answers.jsonl"] = atomic_write(
            run_dir / "answers.jsonl", dumps_jsonl(r.model_dump(mode="json") for r in answers))
        manifest.artifacts["evaluations.jsonl"] = atomic_write(
            run_dir / "evaluations.jsonl", dumps_jsonl(evaluations))
        manifest.artifacts["scores.csv"] = atomic_write(
            run_dir / "scores.csv", dumps_scores(s for o in complete for s in o.scores))

        manifest.incomplete_pairs = sorted(o.key for o in outcomes if not o.complete)
        manifest.finished_at = _now()
        write_manifest(run_dir, manifest)
        status = "PARTIAL" if manifest.incomplete_pairs else "COMPLETE"
        ledger.finish_run(run_id, status, manifest.finished_at, manifest.model_dump(mode="json"))
        logger.info(f"Run {run_id} {status}: {len(complete)}/{len(outcomes)} pairs complete")
        print(run_id)
        return EXIT_PARTIAL if manifest.incomplete_pairs else EXIT_OK
    finally:
        logger.removeHandler(handler)
        handler.close()
        ledger.close()

def cmd_rank(args, config: PipelineConfig, wd: Workdir) -> int:
    ledger = RunLedger(ledger_url(wd.root))
    try:
        run_id = resolve_run(args, wd, ledger)
    finally:
        ledger.close()
    run_dir = wd.run_dir(run_id)
    scores = load_scores(run_dir / "scores.csv")
    direction = RankDirection(args.direction)
    method = ScoringMethod(args.method) if args.method else config.scoring_method

    rankings = rank_all(scores, direction, method)
    if not rankings:
        raise InputError(f"no {direction.value} rankings: run {run_id} has no {method.value} scores")
    report = {
        "direction": direction.value,
        "method": method.value,
        "k": args.k,
        "rankings": [r.model_dump(mode="json") for r in rankings],
    }
    if args.ground_truth:
        report["metrics"] = ranking_metrics(scores, load_ground_truth(Path(args.ground_truth)),
                                            direction, method, args.k)
        logger.info(f"{direction.value} {method.value}: {report['metrics']}")

    name = f"rankings_{direction.value}_{method.value}.json"
    record_artifact(run_dir, name, atomic_write(run_dir / name, dumps_json(report)))
    for r in rankings:
        top = ", ".join(f"{e.candidate_id} ({e.score:.3f})" for e in r.entries[:args.k])
        print(f"{r.subject_id}: {top}")
    return EXIT_OK

def cmd_evaluate(args, config: PipelineConfig, wd: Workdir) -> int:
    if not (args.gold or args.ground_truth):
        raise InputError("evaluate needs --gold and/or --ground-truth")
    ledger = RunLedger(ledger_url(wd.root))
    try:
        run_id = resolve_run(args, wd, ledger)
    finally:
        ledger.close()
    run_dir = wd.run_dir(run_id)

    report = {}
    if args.gold:
        questions = {q.id: q for t in load_trials(wd).values() for q in t.questions}
        accuracy = evaluate_answers(load_answers(run_dir), load_gold_answers(Path(args.gold)),
                                    questions, config.concept_tiers or CONCEPT_TIERS)
        report["answers"] = accuracy.as_dict()
        logger.info(f"Question accuracy: {accuracy.overall.accuracy}")
    if args.ground_truth:
        report["rankings"] = ranking_evaluation(load_scores(run_dir / "scores.csv"),
                                                load_ground_truth(Path(args.ground_truth)), args.k)
        report["k"] = args.k

    record_artifact(run_dir, "evaluation.json",
                    atomic_write(run_dir / "evaluation.json", dumps_json(report)))
    print(dumps_json(report), end="")
    return EXIT_OK

def cmd_cost(args, config: PipelineConfig, wd: Workdir) -> int:
    ledger = RunLedger(ledger_url(wd.root))
    try:
        run_id = resolve_run(args, wd, ledger)
    finally:
        ledger.close()
    run_dir = wd.run_dir(run_id)

    usage = TokenUsage()
    for r in load_answers(run_dir):
        usage = usage + TokenUsage(input_tokens=r.input_tokens, output_tokens=r.output_tokens)
    n_pairs = args.pairs or sum(1 for o in load_outcomes(wd, run_id) if o.complete)
    if n_pairs < 1:
        raise InputError(f"run {run_id} has no complete pairs to cost")
    try:
        report = cost_report(usage, n_pairs, config.cost)
    except ValueError as e:
        raise InputError(str(e))

    record_artifact(run_dir, "cost.json", atomic_write(run_dir / "cost.json", dumps_json(report)))
    for est in report["estimates"]:
        print(f"{est['method']}: total ${est['total_cost_display']}, "
              f"per pair ${est['per_pair_cost_display']}")
    return EXIT_OK

def cmd_report(args, config: PipelineConfig, wd: Workdir) -> int:
    ledger = RunLedger(ledger_url(wd.root))
    try:
        run_id = resolve_run(args, wd, ledger)
    finally:
        ledger.close()
    run_dir = wd.run_dir(run_id)
    text = render_report(load_outcomes(wd, run_id))
    record_artifact(run_dir, "report.md", atomic_write(run_dir / "report.md", text))
    print(run_dir / "report.md")
    return EXIT_OK

COMMANDS = {
    "compose": cmd_compose,
    "ingest": cmd_ingest,
    "index": cmd_index,
    "match": cmd_match,
    "rank": cmd_rank,
    "evaluate": cmd_evaluate,
    "cost": cmd_cost,
    "report": cmd_report,
}

# --- Argument parsing ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trialmatch",
                                     description="Match patient notes against clinical trial criteria.")
    parser.add_argument("--config", help="JSON config file merged over the defaults")
    parser.add_argument("--run-id", help="run to create, resume or read (default: latest run)")
    parser.add_argument("--backend", choices=["scripted", "http"], help="model backend override")
    parser.add_argument("--workdir", help="workdir override")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compose", help="raw trials (JSON Lines) -> validated trial specs")
    p.add_argument("trials_file")
    p.add_argument("--out-dir", help="default: <workdir>/trials")

    p = sub.add_parser("ingest", help="notes + patient headers -> chunk store")
    p.add_argument("notes_file")
    p.add_argument("headers_file")

    sub.add_parser("index", help="embed chunks into per-patient indexes")

    p = sub.add_parser("match", help="answer questions, evaluate criteria and score pairs")
    p.add_argument("--patients", nargs="+", help="default: every ingested patient")
    p.add_argument("--trials", nargs="+", help="default: every composed trial")

    p = sub.add_parser("rank", help="rank candidates from a run's scores")
    p.add_argument("--direction", required=True, choices=[d.value for d in RankDirection])
    p.add_argument("--method", choices=[m.value for m in ScoringMethod],
                   help="default: the configured scoring method")
    p.add_argument("--ground-truth", help="JSON {\"enrollments\": [...]}")
    p.add_argument("--k", type=int, default=3)

    p = sub.add_parser("evaluate", help="question accuracy and ranking metrics for a run")
    p.add_argument("--gold", help="gold answers (JSON Lines)")
    p.add_argument("--ground-truth", help="JSON {\"enrollments\": [...]}")
    p.add_argument("--k", type=int, default=3)

    p = sub.add_parser("cost", help="runtime and cost estimates from token usage")
    p.add_argument("--pairs", type=int, help="pair count override")

    sub.add_parser("report", help="markdown summary of a run")
    return parser

def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        config = load_config(args.config)
        overrides = {}
        if args.workdir:
            overrides["workdir"] = args.workdir
        if args.backend:
            overrides["backend"] = config.backend.model_copy(update={"kind": args.backend})
        if overrides:
            config = config.model_copy(update=overrides)
        if getattr(args, "k", 1) < 1:
            raise InputError("--k must be >= 1")
        return COMMANDS[args.command](args, config, Workdir(config.workdir_path))
    except TrialMatchError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
