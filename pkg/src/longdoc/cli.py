"""Command-line entry point.

One binary, subcommand per pipeline stage. Options can come from a YAML
config file (--config, section per subcommand); explicit flags win over the
config, and unknown config keys are rejected. Every generating subcommand
writes a run manifest {config hash, seed, input hashes, counts} next to its
outputs, so identical config + seed + mock reruns are byte-identical.

Exit codes: 0 success, 1 pipeline error, 2 usage error.
"""

from __future__ import annotations

import functools
import random
import sys
from pathlib import Path

import click
import yaml

from . import corpus as corpus_mod
from . import cpt as cpt_mod
from . import evalagg as evalagg_mod
from . import longpo as longpo_mod
from . import merging as merging_mod
from . import schedule as schedule_mod
from . import sft as sft_mod
from .client import EndpointConfig, GenerationError, HttpClient, MockClient
from .records import read_jsonl, write_jsonl, write_run_manifest
from .tokens import DoesNotFitError, TokenBudget, cpt_budget, sft_budget

PIPELINE_ERRORS = (
    ValueError, KeyError, OSError, GenerationError, DoesNotFitError,
)


def _load_config_section(config_path: str | None, command: str) -> dict:
    if not config_path:
        return {}
    data = yaml.safe_load(Path(config_path).read_text(encoding="utf-8")) or {}
    if not isinstance(data, dict):
        raise click.UsageError("config file must be a mapping of subcommand -> options")
    return data.get(command, {}) or {}


def _apply_config(ctx: click.Context, config_path: str | None) -> None:
    """Fill params from the config section unless the flag was given
    explicitly; reject keys that match no option."""
    section = _load_config_section(config_path, ctx.command.name)
    known = {p.name for p in ctx.command.params}
    unknown = set(section) - known
    if unknown:
        raise click.UsageError(
            f"unknown config keys for {ctx.command.name}: {sorted(unknown)}"
        )
    for key, value in section.items():
        source = ctx.get_parameter_source(key)
        if source is not None and source.name in ("DEFAULT", "DEFAULT_MAP"):
            ctx.params[key] = value


def pipeline_command(fn):
    """Shared error handling: pipeline failures exit 1 with the message."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except PIPELINE_ERRORS as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


def make_client(mock: str | None):
    if mock:
        return MockClient.from_fixture(mock)
    return HttpClient(EndpointConfig())


config_option = click.option("--config", "config_path", type=click.Path(exists=True),
                             default=None, help="YAML config; flags win over it.")
seed_option = click.option("--seed", type=int, default=0, show_default=True)
mock_option = click.option("--mock", type=click.Path(exists=True), default=None,
                           help="Mock-client fixture JSONL; omits the HTTP endpoint.")
out_option = click.option("--out", "out_dir", type=click.Path(), required=True)


@click.group()
def main():
    """Desk-scale long-document VQA data machinery."""


@main.command()
@config_option
@click.option("--manifest", type=click.Path(exists=True), required=True)
@click.option("--neighbors", type=click.Path(exists=True), default=None)
@out_option
@click.pass_context
@pipeline_command
def ingest(ctx, config_path, manifest, neighbors, out_dir):
    """Validate a corpus manifest and write its canonical form."""
    _apply_config(ctx, config_path)
    p = ctx.params
    manifest, neighbors, out_dir = p["manifest"], p["neighbors"], p["out_dir"]
    corpus = corpus_mod.load_manifest(manifest, neighbors)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus_mod.save_manifest(corpus, out / "corpus.jsonl")
    inputs = [manifest] + ([neighbors] if neighbors else [])
    write_run_manifest(
        out, {"command": "ingest"}, None, inputs,
        {"documents": len(corpus.documents), "pages": corpus.page_count},
    )
    click.echo(f"ingested {len(corpus.documents)} documents, {corpus.page_count} pages")


def _budget_from(budget_tokens: int | None, patch: int, phase: str) -> TokenBudget:
    base = cpt_budget(patch_size=patch) if phase == "cpt" else sft_budget(patch_size=patch)
    if budget_tokens is None:
        return base
    return TokenBudget(budget_tokens, base.patch_size, base.min_side, base.max_side)


@main.command("cpt-gen")
@config_option
@click.option("--manifest", type=click.Path(exists=True), required=True)
@click.option("--task", type=click.Choice(
    ["fim", "unshuffle", "retrieval-key", "retrieval-position", "counting", "all"]),
    default="all", show_default=True)
@seed_option
@mock_option
@click.option("--budget-tokens", type=int, default=None)
@click.option("--patch", type=int, default=28, show_default=True)
@click.option("--instance-label", default="tables", show_default=True)
@click.option("--page-indices/--no-page-indices", default=False, show_default=True)
@out_option
@click.pass_context
@pipeline_command
def cpt_gen(ctx, config_path, manifest, task, seed, mock, budget_tokens, patch,
            instance_label, page_indices, out_dir):
    """Build CPT task examples (FIM, unshuffle, retrieval, counting)."""
    _apply_config(ctx, config_path)
    p = ctx.params
    manifest, task, seed, out_dir = p["manifest"], p["task"], p["seed"], p["out_dir"]
    corpus = corpus_mod.load_manifest(manifest)
    budget = _budget_from(p.get("budget_tokens"), p["patch"], "cpt")
    tasks = ([task] if task != "all"
             else ["fim", "unshuffle", "retrieval-key", "retrieval-position", "counting"])
    client = None
    if "counting" in tasks:
        import os

        if p.get("mock") or os.getenv("GENAI_BASE_URL"):
            client = make_client(p.get("mock"))
        elif task == "counting":
            raise click.UsageError("counting needs --mock or a configured endpoint")

    examples = []
    skipped = 0
    for doc_id in sorted(corpus.documents):
        doc = corpus.documents[doc_id]
        doc_seed = seed ^ hash_seed(doc_id)
        for kind in tasks:
            try:
                if kind == "fim":
                    rng = random.Random(doc_seed)
                    candidates = [p.index for p in doc.pages if p.parsed_text]
                    if not candidates:
                        raise cpt_mod.CptBuildError(f"{doc_id}: no parsed text for FIM")
                    examples.append(cpt_mod.build_fim(
                        doc, candidates[rng.randrange(len(candidates))], budget=budget))
                elif kind == "unshuffle":
                    examples.append(cpt_mod.build_unshuffle(doc, doc_seed, budget=budget))
                elif kind == "retrieval-key":
                    examples.append(cpt_mod.build_retrieval(doc, "key", doc_seed, budget=budget))
                elif kind == "retrieval-position":
                    examples.append(cpt_mod.build_retrieval(doc, "position", doc_seed, budget=budget))
                elif kind == "counting":
                    if client is None:
                        skipped += 1
                        continue
                    counts = cpt_mod.label_page_counts(doc, p["instance_label"], client)
                    examples.append(cpt_mod.build_counting(
                        doc, counts, p["instance_label"], budget=budget))
            except (cpt_mod.CptBuildError, DoesNotFitError) as exc:
                click.echo(f"skip {doc_id}/{kind}: {exc}", err=True)
                skipped += 1

    out = Path(out_dir)
    count = write_jsonl(examples, out / "cpt_examples.jsonl")
    write_run_manifest(
        out,
        {"command": "cpt-gen", "task": task, "instance_label": p["instance_label"],
         "budget_tokens": budget.max_sequence_tokens, "patch": budget.patch_size,
         "page_indices": p["page_indices"]},
        seed, [manifest] + ([p["mock"]] if p.get("mock") else []),
        {"examples": count, "skipped": skipped},
    )
    click.echo(f"wrote {count} CPT examples ({skipped} skipped)")


def hash_seed(text: str) -> int:
    import zlib

    return zlib.crc32(text.encode("utf-8"))


@main.command("sft-gen")
@config_option
@click.option("--manifest", type=click.Path(exists=True), required=True)
@click.option("--neighbors", type=click.Path(exists=True), default=None)
@click.option("--pipeline", type=click.Choice(["magpie", "single-page", "multi-page"]),
              default="single-page", show_default=True)
@click.option("--answer-mode", type=click.Choice(["plain", "recursive"]),
              default="recursive", show_default=True)
@click.option("--strategy", type=click.Choice(list(sft_mod.CONTEXT_STRATEGIES)),
              default="adjacent_range", show_default=True)
@click.option("--k", type=int, default=3, show_default=True,
              help="Top-k pages for the recursive answer pipeline.")
@click.option("--evidence-mode", type=click.Choice(["visual_pages", "text_evidence"]),
              default="visual_pages", show_default=True)
@click.option("--teacher-model", default="teacher", show_default=True,
              help="Answering model id. Point this at the model being trained "
                   "for the self-improvement setting.")
@click.option("--extractor-model", default="extractor", show_default=True)
@click.option("--judge-model", default="judge", show_default=True)
@seed_option
@mock_option
@click.option("--limit", type=int, default=None, help="Cap on question pages.")
@click.option("--patch", type=int, default=28, show_default=True)
@click.option("--budget-tokens", type=int, default=None)
@click.option("--page-indices/--no-page-indices", default=True, show_default=True)
@out_option
@click.pass_context
@pipeline_command
def sft_gen(ctx, config_path, manifest, neighbors, pipeline, answer_mode, strategy,
            k, evidence_mode, teacher_model, extractor_model, judge_model,
            seed, mock, limit, patch, budget_tokens, page_indices, out_dir):
    """Generate SFT examples: questions, contexts, answers."""
    _apply_config(ctx, config_path)
    p = ctx.params
    manifest, out_dir = p["manifest"], p["out_dir"]
    corpus = corpus_mod.load_manifest(manifest, p.get("neighbors"))
    budget = _budget_from(p.get("budget_tokens"), p["patch"], "sft")
    client = make_client(p.get("mock"))

    question_page_ids = sorted(corpus_mod.filter_question_pages(corpus))
    if p.get("limit"):
        question_page_ids = question_page_ids[: p["limit"]]

    examples = []
    skipped = 0
    for page_id in question_page_ids:
        page = corpus.page(page_id)
        page_seed = p["seed"] ^ hash_seed(page_id)
        try:
            context = sft_mod.assemble_context(
                p["strategy"], corpus, corpus.neighbors, page, seed=page_seed)
            if p["pipeline"] == "magpie":
                question = sft_mod.magpie_question(page, client, model=p["teacher_model"])
            elif p["pipeline"] == "single-page":
                question = sft_mod.generate_sp_questions(
                    page, client, page_seed, model=p["teacher_model"])
            else:
                candidates = sft_mod.generate_mp_questions(
                    context, client, model=p["teacher_model"])
                keepers = [
                    q for q in candidates
                    if sft_mod.filter_multipage(
                        q, context.pages, client, client, judge_model=p["judge_model"])
                ]
                if not keepers:
                    skipped += 1
                    continue
                question = keepers[0]
                question.kept = True

            trace = None
            if p["answer_mode"] == "plain":
                answer = sft_mod.answer_plain(
                    context, question, client, model=p["teacher_model"], budget=budget)
            else:
                trace = sft_mod.answer_recursive(
                    context, question, client, client, k=p["k"], mode=p["evidence_mode"],
                    extract_model=p["extractor_model"], answer_model=p["teacher_model"])
                answer = trace.final_answer
            example = sft_mod.build_sft_example(context, question, answer,
                                                budget=budget, trace=trace)
            if p["page_indices"]:
                example = schedule_mod.inject_page_indices(example)
            examples.append(example)
        except (sft_mod.SftBuildError, GenerationError, DoesNotFitError) as exc:
            click.echo(f"skip {page_id}: {exc}", err=True)
            skipped += 1

    out = Path(out_dir)
    count = write_jsonl(examples, out / "sft_examples.jsonl")
    write_run_manifest(
        out,
        {"command": "sft-gen", "pipeline": p["pipeline"], "answer_mode": p["answer_mode"],
         "strategy": p["strategy"], "k": p["k"], "evidence_mode": p["evidence_mode"],
         "models": {"teacher": p["teacher_model"], "extractor": p["extractor_model"],
                    "judge": p["judge_model"]},
         "budget_tokens": budget.max_sequence_tokens, "patch": budget.patch_size,
         "page_indices": p["page_indices"], "limit": p.get("limit")},
        p["seed"],
        [manifest] + [x for x in (p.get("neighbors"), p.get("mock")) if x],
        {"examples": count, "skipped": skipped},
    )
    click.echo(f"wrote {count} SFT examples ({skipped} skipped)")


@main.command("longpo-pairs")
@config_option
@click.option("--manifest", type=click.Path(exists=True), required=True)
@click.option("--neighbors", type=click.Path(exists=True), default=None)
@click.option("--strategy", type=click.Choice(list(sft_mod.CONTEXT_STRATEGIES)),
              default="adjacent_range", show_default=True)
@seed_option
@mock_option
@click.option("--limit", type=int, default=None)
@out_option
@click.pass_context
@pipeline_command
def longpo_pairs(ctx, config_path, manifest, neighbors, strategy, seed, mock, limit, out_dir):
    """Build preference pairs: chosen from origin pages, rejected from the
    full context; log-probabilities are filled offline."""
    _apply_config(ctx, config_path)
    p = ctx.params
    manifest, out_dir = p["manifest"], p["out_dir"]
    corpus = corpus_mod.load_manifest(manifest, p.get("neighbors"))
    client = make_client(p.get("mock"))

    question_page_ids = sorted(corpus_mod.filter_question_pages(corpus))
    if p.get("limit"):
        question_page_ids = question_page_ids[: p["limit"]]

    pairs = []
    skipped = 0
    for page_id in question_page_ids:
        page = corpus.page(page_id)
        page_seed = p["seed"] ^ hash_seed(page_id)
        try:
            context = sft_mod.assemble_context(
                p["strategy"], corpus, corpus.neighbors, page, seed=page_seed)
            question = sft_mod.generate_sp_questions(page, client, page_seed)
            pairs.append(longpo_mod.build_preference_pair(question, context, client))
        except (sft_mod.SftBuildError, GenerationError) as exc:
            click.echo(f"skip {page_id}: {exc}", err=True)
            skipped += 1

    out = Path(out_dir)
    count = write_jsonl(pairs, out / "pairs.jsonl")
    write_run_manifest(
        out,
        {"command": "longpo-pairs", "strategy": p["strategy"],
         "pair_target_full_scale": longpo_mod.FULL_SCALE_PAIR_TARGET},
        p["seed"],
        [manifest] + [x for x in (p.get("neighbors"), p.get("mock")) if x],
        {"pairs": count, "skipped": skipped},
    )
    click.echo(f"wrote {count} preference pairs ({skipped} skipped)")


@main.command("longpo-loss")
@config_option
@click.option("--pairs", "pairs_path", type=click.Path(exists=True), required=True)
@click.option("--beta", type=float, default=0.1, show_default=True)
@click.option("--lam", "--lambda", "lam", type=float, default=0.01, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.pass_context
@pipeline_command
def longpo_loss_cmd(ctx, config_path, pairs_path, beta, lam, out_path):
    """Compute the preference objective over a scored pair file."""
    _apply_config(ctx, config_path)
    pairs = longpo_mod.read_pairs(ctx.params["pairs_path"])
    config = longpo_mod.LongPOConfig(beta=ctx.params["beta"], lam=ctx.params["lam"])
    report = longpo_mod.longpo_loss(pairs, config)
    payload = longpo_mod.loss_report_json(report)
    if ctx.params.get("out_path"):
        Path(ctx.params["out_path"]).write_text(payload + "\n", encoding="utf-8")
    click.echo(payload)


@main.command()
@config_option
@click.option("--examples", "examples_path", type=click.Path(exists=True), required=True)
@click.option("--stage", type=click.Choice(["short", "long", "both"]),
              default="both", show_default=True)
@click.option("--curriculum", type=click.Choice(["none", "length", "length-difficulty"]),
              default="none", show_default=True)
@click.option("--mix-fraction", type=float, default=schedule_mod.DEFAULT_MIX_FRACTION,
              show_default=True)
@seed_option
@out_option
@click.pass_context
@pipeline_command
def schedule(ctx, config_path, examples_path, stage, curriculum, mix_fraction, seed, out_dir):
    """Split examples into stages and order them by curriculum."""
    _apply_config(ctx, config_path)
    p = ctx.params
    out_dir = p["out_dir"]
    items = [schedule_mod.ScheduleItem.from_record(r) for r in read_jsonl(p["examples_path"])]
    split = schedule_mod.split_stages(items)
    kind = p["curriculum"].replace("-", "_")

    stages = {"short": split.short, "long": split.long}
    wanted = ["short", "long"] if p["stage"] == "both" else [p["stage"]]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    counts = {"dropped": len(split.dropped)}
    for name in wanted:
        ordered = schedule_mod.order_curriculum(
            stages[name], kind, mix_fraction=p["mix_fraction"], seed=p["seed"])
        records = [
            {"example_id": i.example_id, "page_count": i.page_count,
             "token_estimate": i.token_estimate, "assistant_tokens": i.assistant_tokens,
             "task_kind": i.task_kind, "stage": name}
            for i in ordered
        ]
        counts[name] = write_jsonl(records, out / f"schedule_{name}.jsonl")
    write_jsonl(
        [{"example_id": i.example_id, "page_count": i.page_count} for i in split.dropped],
        out / "dropped.jsonl",
    )
    write_run_manifest(
        out,
        {"command": "schedule", "stage": p["stage"], "curriculum": p["curriculum"],
         "mix_fraction": p["mix_fraction"]},
        p["seed"], [p["examples_path"]], counts,
    )
    click.echo(" ".join(f"{k}={v}" for k, v in sorted(counts.items())))


@main.command()
@config_option
@click.option("--schedule", "schedule_path", type=click.Path(exists=True), required=True)
@click.option("--budget", type=int, required=True, help="Pack budget in tokens.")
@click.option("--stage", default="", help="Stage tag recorded on packs.")
@out_option
@click.pass_context
@pipeline_command
def pack(ctx, config_path, schedule_path, budget, stage, out_dir):
    """Greedily pack an ordered schedule into budgeted sequences."""
    _apply_config(ctx, config_path)
    p = ctx.params
    out_dir = p["out_dir"]
    items = [schedule_mod.ScheduleItem.from_record(r) for r in read_jsonl(p["schedule_path"])]
    packs = schedule_mod.pack_sequences(items, p["budget"], stage=p["stage"])
    out = Path(out_dir)
    count = write_jsonl(packs, out / "packs.jsonl")
    write_run_manifest(
        out, {"command": "pack", "budget": p["budget"], "stage": p["stage"]},
        None, [p["schedule_path"]],
        {"packs": count, "examples": sum(len(pk.example_ids) for pk in packs)},
    )
    click.echo(f"wrote {count} packs")


@main.command()
@config_option
@click.option("--recipe", type=click.Path(exists=True), required=True)
@click.pass_context
@pipeline_command
def merge(ctx, config_path, recipe):
    """Apply a task-arithmetic merge recipe."""
    _apply_config(ctx, config_path)
    parsed = merging_mod.MergeRecipe.from_file(ctx.params["recipe"])
    out = merging_mod.merge_from_recipe(parsed)
    click.echo(f"merged with alpha={parsed.resolved_alpha()} -> {out}")


@main.command()
@config_option
@click.option("--scores", type=click.Path(exists=True), required=True)
@click.option("--baseline", default=None, help="Checkpoint deltas are taken against.")
@click.option("--out", "out_path", type=click.Path(), required=True,
              help="Report path; .html renders the leaderboard view, else JSON.")
@click.option("--json-out", type=click.Path(), default=None)
@click.pass_context
@pipeline_command
def evalagg(ctx, config_path, scores, baseline, out_path, json_out):
    """Normalize scores, compute VA/LCA aggregates, deltas and run variance."""
    _apply_config(ctx, config_path)
    p = ctx.params
    table = evalagg_mod.ScoreTable.from_file(p["scores"])
    normalized = evalagg_mod.normalize_scores(table)
    report = evalagg_mod.aggregate(normalized, baseline=p.get("baseline"))
    payload = evalagg_mod.canonical_json(report.to_record())

    out = Path(p["out_path"])
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix == ".html":
        records = [
            {"checkpoint": name, "method": "", "base_model": "", "merge_recipe": "",
             "data_composition": "", "scores": table.rows[name]}
            for name in sorted(table.rows)
        ]
        evalagg_mod.export_leaderboard(records, "html", out)
    else:
        out.write_text(payload + "\n", encoding="utf-8")
    if p.get("json_out"):
        Path(p["json_out"]).write_text(payload + "\n", encoding="utf-8")
    click.echo(payload)


@main.command()
@config_option
@click.option("--items", "items_path", type=click.Path(exists=True), required=True)
@click.option("--manifest", type=click.Path(exists=True), required=True)
@mock_option
@click.option("--run-id", default="flag-run", show_default=True)
@out_option
@click.pass_context
@pipeline_command
def flag(ctx, config_path, items_path, manifest, mock, run_id, out_dir):
    """Run the inconsistency flagger over benchmark items."""
    from . import flagging as flagging_mod

    _apply_config(ctx, config_path)
    p = ctx.params
    out_dir = p["out_dir"]
    corpus = corpus_mod.load_manifest(p["manifest"])
    client = make_client(p.get("mock"))
    items = [flagging_mod.BenchmarkItem.from_record(r) for r in read_jsonl(p["items_path"])]

    flags = []
    for item in items:
        document = corpus.document(item.doc_id)
        flags.append(flagging_mod.flag_item(
            item, document, client, client, run_id=p["run_id"]))

    out = Path(out_dir)
    count = write_jsonl(flags, out / "flags.jsonl")
    issue_counts: dict[str, int] = {}
    for f in flags:
        issue_counts[f.issue_kind] = issue_counts.get(f.issue_kind, 0) + 1
    write_run_manifest(
        out, {"command": "flag", "run_id": p["run_id"]}, None,
        [p["items_path"], p["manifest"]] + ([p["mock"]] if p.get("mock") else []),
        {"flags": count, **issue_counts},
    )
    click.echo(f"wrote {count} flags")


@main.command("review-serve")
@config_option
@click.option("--store", "store_path", type=click.Path(exists=True), required=True)
@click.option("--bind", default=None, help="host:port; defaults to REVIEW_BIND_ADDR.")
@click.option("--static", "static_dir", type=click.Path(), default=None,
              help="Directory of built UI assets served at /.")
@click.pass_context
@pipeline_command
def review_serve(ctx, config_path, store_path, bind, static_dir):
    """Serve the human review workflow over HTTP."""
    from .review_service import serve_review

    _apply_config(ctx, config_path)
    p = ctx.params
    serve_review(p["store_path"], bind_addr=p.get("bind"), static_dir=p.get("static_dir"))


@main.command("export-leaderboard")
@config_option
@click.option("--records", "records_path", type=click.Path(exists=True), required=True)
@click.option("--format", "fmt", type=click.Choice(["json", "html"]), default="html",
              show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.pass_context
@pipeline_command
def export_leaderboard(ctx, config_path, records_path, fmt, out_path):
    """Render the run leaderboard (checkpoints, recipes, scores)."""
    _apply_config(ctx, config_path)
    p = ctx.params
    records = list(read_jsonl(p["records_path"]))
    out = evalagg_mod.export_leaderboard(records, p["fmt"], p["out_path"])
    click.echo(f"wrote {out}")


if __name__ == "__main__":
    main()
