"""Command-line surface tying the pipeline together.

Exit codes: 0 success, 1 usage, 2 data error, 3 backend failure.  Every
subcommand writes a machine-readable JSON report under <store>/reports/.
Option precedence is flags > VISASSOC_* environment variables > --config
file.
"""

import json
import os
from pathlib import Path

import click

from .annotation import (
    AnnotationError,
    TaskPool,
    build_grounding_pool,
    build_ranking_pool,
)
from .corpus import CorpusError, load_corpus
from .embfile import EmbeddingFormatError, read_embeddings
from .gateway import (
    Gateway,
    GatewayError,
    GatewayPolicy,
    HttpBackend,
    ReplayBackend,
    ResponseCache,
)
from .metrics import (
    MetricError,
    average_abstraction_rank,
    competition_ranks,
    cosine_similarity,
    evaluate_retrieval,
    fleiss_kappa,
    foil_preference,
    grounding_bucket_rate,
    load_annotations,
    matching_preference,
    paired_t_test,
    wilcoxon_signed_rank,
)
from .pipeline import run_caption, run_describe, run_ingest, run_mine
from .prompts import PromptError
from .salience import ConcretenessLexicon, SidecarTagger
from .server import serve as run_server
from .store import (
    DatasetStore,
    StoreError,
    corpus_counts,
    uniqueness_grid,
    write_uniqueness_csv,
)


class BackendFailure(Exception):
    """A model backend failed hard during a pipeline stage."""


def _resolve(flag_value, name: str, config: dict, default=None):
    """flags > env vars > config file > default."""
    if flag_value is not None:
        return flag_value
    env = os.environ.get(f"VISASSOC_{name.upper()}")
    if env is not None:
        return env
    if name in config:
        return config[name]
    return default


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        loaded = json.load(fh)
    if not isinstance(loaded, dict):
        raise click.UsageError("--config must contain a JSON object")
    return loaded


def _write_report(store: DatasetStore, name: str, payload: dict) -> Path:
    path = store.reports_dir / f"{name}.json"
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    return path


def _build_gateway(config: dict, backend, replay_file, cache_file, endpoint,
                   model, api_key, retries, max_in_flight) -> Gateway:
    backend = _resolve(backend, "backend", config, "replay")
    policy = GatewayPolicy(
        max_in_flight=int(_resolve(max_in_flight, "max_in_flight", config, 4)),
        retries=int(_resolve(retries, "retries", config, 2)),
        backoff=float(_resolve(None, "backoff", config, 0.25)),
    )
    cache_file = _resolve(cache_file, "cache_file", config)
    cache = ResponseCache(cache_file) if cache_file else None
    if backend == "replay":
        replay_file = _resolve(replay_file, "replay_file", config)
        if not replay_file:
            raise click.UsageError("--replay-file is required with --backend replay")
        return Gateway(ReplayBackend(replay_file), cache=cache, policy=policy)
    if backend == "http":
        endpoint = _resolve(endpoint, "endpoint", config)
        model = _resolve(model, "model", config)
        if not endpoint or not model:
            raise click.UsageError("--endpoint and --model are required with --backend http")
        api_key = _resolve(api_key, "api_key", config)
        return Gateway(
            HttpBackend("http", endpoint, model, api_key=api_key),
            cache=cache,
            policy=policy,
        )
    raise click.UsageError(f"unknown backend {backend!r}")


def _backend_options(fn):
    for option in reversed([
        click.option("--backend", type=click.Choice(["replay", "http"]), default=None),
        click.option("--replay-file", type=click.Path(), default=None),
        click.option("--cache-file", type=click.Path(), default=None),
        click.option("--endpoint", default=None),
        click.option("--model", default=None),
        click.option("--api-key", default=None),
        click.option("--retries", type=int, default=None),
        click.option("--max-in-flight", type=int, default=None),
    ]):
        fn = option(fn)
    return fn


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.pass_context
def cli(ctx, config_path):
    """Mine visual associations, generate creative captions, evaluate."""
    ctx.obj = _load_config(config_path)


@cli.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", required=True,
              type=click.Choice(["coco_json", "caption_jsonl"]))
@click.option("--store", "store_dir", required=True, type=click.Path())
@click.option("--split", default="train")
@click.pass_obj
def ingest(config, manifest, fmt, store_dir, split):
    """Load a corpus manifest into a new dataset store."""
    corpus = load_corpus(manifest, fmt, split)
    store = DatasetStore.create(
        store_dir, {"command": "ingest", "manifest_format": fmt, "split": split}
    )
    report = run_ingest(corpus, store)
    path = _write_report(store, "ingest", report.to_json())
    click.echo(f"ingested {report.processed} records -> {path}")


def _stage_config(backend_opts: dict, **extra) -> dict:
    """Flag snapshot for the store manifest; credentials never land there."""
    merged = {**backend_opts, **extra}
    return {
        key: value
        for key, value in sorted(merged.items())
        if value is not None and key != "api_key"
    }


def _run_stage(store_dir, stage_name, runner, stage_config=None):
    store = DatasetStore.open(store_dir)
    report = runner(store)
    if stage_config is not None:
        manifest_config = store.load_manifest().get("config", {})
        manifest_config[stage_name] = stage_config
        store.save_manifest(manifest_config)
    path = _write_report(store, stage_name, report.to_json())
    click.echo(
        f"{stage_name}: {report.processed} ok, {report.skipped} skipped, "
        f"{report.failed} failed -> {path}"
    )
    if report.failed:
        detail = "; ".join(
            f"{key}: {', '.join(msgs)}" for key, msgs in sorted(report.failures.items())
        )
        raise BackendFailure(f"{report.failed} {stage_name} failures: {detail}")


@cli.command()
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True))
@click.option("--overwrite", is_flag=True, default=False)
@_backend_options
@click.pass_obj
def describe(config, store_dir, overwrite, **backend_opts):
    """Generate detailed captions for every image."""
    gateway = _build_gateway(config, **backend_opts)
    _run_stage(store_dir, "describe",
               lambda store: run_describe(store, gateway, overwrite),
               _stage_config(backend_opts, overwrite=overwrite))


@cli.command()
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True))
@click.option("--lexicon", "lexicon_path", required=True, type=click.Path(exists=True))
@click.option("--tags", "tags_path", type=click.Path(exists=True), default=None,
              help="pre-tagged caption sidecar JSONL")
@click.option("--threshold", type=float, default=3.0)
@_backend_options
@click.pass_obj
def mine(config, store_dir, lexicon_path, tags_path, threshold, **backend_opts):
    """Mine association ladders for every image's salient elements."""
    gateway = _build_gateway(config, **backend_opts)
    lexicon = ConcretenessLexicon.from_tsv(lexicon_path)
    tagger = SidecarTagger.from_jsonl(tags_path) if tags_path else None
    _run_stage(
        store_dir, "mine",
        lambda store: run_mine(store, gateway, lexicon, tagger, threshold),
        _stage_config(backend_opts, lexicon=str(lexicon_path),
                      tags=tags_path and str(tags_path), threshold=threshold),
    )


@cli.command()
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True))
@click.option("--word-retries", type=int, default=2, show_default=True,
              help="reprompts when the required word is missing")
@_backend_options
@click.pass_obj
def caption(config, store_dir, word_retries, **backend_opts):
    """Generate creative captions from mined ladders."""
    gateway = _build_gateway(config, **backend_opts)
    _run_stage(store_dir, "caption",
               lambda store: run_caption(store, gateway, word_retries),
               _stage_config(backend_opts, word_retries=word_retries))


@cli.command()
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True))
@click.option("--split", default=None, help="restrict the CSV grid to one split")
@click.option("--include-singletons", is_flag=True, default=False)
@click.option("--distinct", is_flag=True, default=False,
              help="count distinct strings instead of occurrences")
def stats(store_dir, split, include_singletons, distinct):
    """Corpus counts and the uniqueness grid (CSV plus JSON report)."""
    store = DatasetStore.open(store_dir)
    counts = corpus_counts(store)
    grid = uniqueness_grid(store, include_singletons, distinct)
    if split:
        grid = {key: value for key, value in grid.items() if key[0] == split}
    counts.uniqueness = grid
    csv_path = store.reports_dir / "uniqueness.csv"
    write_uniqueness_csv(grid, csv_path)
    path = _write_report(store, "stats", counts.to_json())
    click.echo(f"stats -> {path}, grid -> {csv_path}")


def _load_gold(path: str) -> dict[str, str]:
    gold = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                gold[str(obj["query_id"])] = str(obj["candidate_id"])
    return gold


def _aligned_scores(queries, against) -> list[float]:
    sim = cosine_similarity(queries, against)
    index = {cid: j for j, cid in enumerate(sim.candidate_ids)}
    missing = [qid for qid in sim.query_ids if qid not in index]
    if missing:
        raise MetricError(f"ids missing from candidate file: {missing[:5]}")
    return [float(sim.scores[i][index[qid]]) for i, qid in enumerate(sim.query_ids)]


@cli.group()
def eval():
    """Retrieval, matching, and hallucination-contrast evaluations."""


@eval.command()
@click.option("--queries", "queries_path", required=True, type=click.Path(exists=True))
@click.option("--candidates", "candidates_path", required=True, type=click.Path(exists=True))
@click.option("--gold", "gold_path", required=True, type=click.Path(exists=True))
@click.option("--k", "ks", default="1,5,10,20", show_default=True)
@click.option("--compare", "compare_path", type=click.Path(exists=True), default=None,
              help="second query embedding file; adds a Wilcoxon test on rank pairs")
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True))
@click.option("--name", default="retrieve")
def retrieve(queries_path, candidates_path, gold_path, ks, compare_path, store_dir, name):
    """Recall@k and average rank of the gold candidate."""
    store = DatasetStore.open(store_dir)
    queries = read_embeddings(queries_path)
    candidates = read_embeddings(candidates_path)
    gold = _load_gold(gold_path)
    k_values = [int(k) for k in ks.split(",") if k.strip()]
    sim = cosine_similarity(queries, candidates, gold)
    report = evaluate_retrieval(sim, k_values)
    payload = report.to_json()
    if compare_path:
        other = cosine_similarity(read_embeddings(compare_path), candidates, gold)
        ranks = competition_ranks(sim).astype(float)
        other_ranks = competition_ranks(other).astype(float)
        stat, p = wilcoxon_signed_rank(ranks, other_ranks)
        payload["compare"] = {
            "avg_rank": float(other_ranks.mean()),
            "test_name": "wilcoxon_signed_rank",
            "statistic": stat,
            "p_value": p,
        }
    path = _write_report(store, name, payload)
    click.echo(f"retrieval report -> {path}")


@eval.command()
@click.option("--queries", "queries_path", required=True, type=click.Path(exists=True))
@click.option("--correct", "correct_path", required=True, type=click.Path(exists=True))
@click.option("--incorrect", "incorrect_path", required=True, type=click.Path(exists=True))
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True))
@click.option("--name", default="match")
def match(queries_path, correct_path, incorrect_path, store_dir, name):
    """Preference for the correct candidate, with a paired t-test."""
    store = DatasetStore.open(store_dir)
    queries = read_embeddings(queries_path)
    sim_correct = _aligned_scores(queries, read_embeddings(correct_path))
    sim_incorrect = _aligned_scores(queries, read_embeddings(incorrect_path))
    rate = matching_preference(sim_correct, sim_incorrect)
    stat, p = paired_t_test(sim_correct, sim_incorrect)
    payload = {
        "preference_rate": rate,
        "test_name": "paired_t",
        "statistic": stat,
        "p_value": p,
        "pairs": len(sim_correct),
    }
    path = _write_report(store, name, payload)
    click.echo(f"matching report -> {path}")


@eval.command()
@click.option("--queries", "queries_path", required=True, type=click.Path(exists=True))
@click.option("--a", "a_path", required=True, type=click.Path(exists=True),
              help="first caption family embeddings (e.g. originals)")
@click.option("--b", "b_path", required=True, type=click.Path(exists=True),
              help="second caption family embeddings (e.g. creative at one degree)")
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True))
@click.option("--name", default="foil")
def foil(queries_path, a_path, b_path, store_dir, name):
    """How often family A outscores family B against the same images."""
    store = DatasetStore.open(store_dir)
    queries = read_embeddings(queries_path)
    sim_a = _aligned_scores(queries, read_embeddings(a_path))
    sim_b = _aligned_scores(queries, read_embeddings(b_path))
    payload = {
        "preference_rate": foil_preference(sim_a, sim_b),
        "pairs": len(sim_a),
    }
    path = _write_report(store, name, payload)
    click.echo(f"foil report -> {path}")


def _agreement_table(pairs, categories):
    """Item x category counts over items rated by exactly 3 annotators.

    ``pairs`` is an iterable of (item_id, category_value).
    """
    by_item: dict[str, list] = {}
    for item_id, value in pairs:
        by_item.setdefault(item_id, []).append(value)
    table = []
    for item_id in sorted(by_item):
        values = by_item[item_id]
        if len(values) != 3:
            continue
        row = [0] * len(categories)
        for value in values:
            row[categories.index(value)] += 1
        table.append(row)
    return table


@cli.command()
@click.option("--annotations", "annotations_path", required=True,
              type=click.Path(exists=True))
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True))
@click.option("--threshold", type=int, default=3, show_default=True)
def agreement(annotations_path, store_dir, threshold):
    """Aggregate human judgments: bucket rates, abstraction ranks, Fleiss kappa."""
    store = DatasetStore.open(store_dir)
    records = load_annotations(annotations_path)
    grounding = [r for r in records if r.task == "grounding"]
    ranking = [r for r in records if r.task == "ranking"]
    payload: dict = {}
    if grounding:
        payload["grounding_rate"] = {
            str(d): rate
            for d, rate in grounding_bucket_rate(grounding, threshold).items()
        }
        table = _agreement_table(
            ((r.item_id, r.rating) for r in grounding), list(range(1, 5))
        )
        payload["grounding_kappa"] = (
            fleiss_kappa(table, 3) if len(table) >= 2 else None
        )
    if ranking:
        payload["abstraction_rank"] = average_abstraction_rank(ranking)
        # Each (item, presented slot) pair is a kappa subject; its category is
        # the rank the annotator assigned to that slot.
        slot_pairs = []
        for record in ranking:
            assert record.ranking is not None
            for slot, rank in enumerate(record.ranking):
                slot_pairs.append((f"{record.item_id}#{slot}", rank))
        table = _agreement_table(slot_pairs, list(range(1, 7)))
        payload["ranking_kappa"] = fleiss_kappa(table, 3) if len(table) >= 2 else None
    path = _write_report(store, "agreement", payload)
    click.echo(f"agreement report -> {path}")


@cli.command()
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, required=True,
              help="task randomization seed (mandatory)")
@click.option("--grounding-per-degree", type=int, default=20, show_default=True)
@click.option("--ranking-tasks", type=int, default=100, show_default=True)
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
@click.option("--static-dir", type=click.Path(), default=None,
              help="annotation UI bundle to serve at /")
@click.option("--pool-only", is_flag=True, default=False,
              help="build and save the task pool without starting the server")
def serve(store_dir, seed, grounding_per_degree, ranking_tasks, host, port,
          static_dir, pool_only):
    """Serve annotation tasks over HTTP and persist judgments."""
    store = DatasetStore.open(store_dir)
    pool_path = store.root / "pool.jsonl"
    annotations_path = store.root / "annotations.jsonl"
    if pool_path.exists():
        pool = TaskPool.load_pool(pool_path, annotations_path)
    else:
        captions = list(store.iter_captions())
        images = {r.image_id: r.image_uri for r in store.iter_images()}
        originals = {r.image_id: r.short_caption for r in store.iter_images()}
        tasks = build_grounding_pool(captions, images, grounding_per_degree, seed)
        tasks += build_ranking_pool(originals, images, captions, ranking_tasks, seed)
        pool = TaskPool(tasks, annotations_path)
        pool.save_pool(pool_path)
    click.echo(f"pool of {len(pool.tasks)} tasks at {pool_path}")
    if not pool_only:
        run_server(pool, host=host, port=port, static_dir=static_dir)


@cli.command()
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True))
@click.option("--what", type=click.Choice(["annotations", "captions"]), required=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def export(store_dir, what, out_path):
    """Export canonical artifacts for downstream consumers."""
    store = DatasetStore.open(store_dir)
    if what == "annotations":
        annotations_path = store.root / "annotations.jsonl"
        if not annotations_path.exists():
            raise StoreError(f"no annotations at {annotations_path}")
        records = load_annotations(annotations_path)
        with open(out_path, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record.to_json(), ensure_ascii=False) + "\n")
        click.echo(f"exported {len(records)} annotation records -> {out_path}")
    else:
        admitted = [c for c in store.iter_captions() if c.admitted]
        with open(out_path, "w", encoding="utf-8") as fh:
            for caption in admitted:
                fh.write(json.dumps(caption.to_json(), ensure_ascii=False) + "\n")
        click.echo(f"exported {len(admitted)} admitted captions -> {out_path}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="visassoc", standalone_mode=False)
        return 0
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return 1
    except click.exceptions.Abort:
        return 130
    except click.ClickException as exc:
        exc.show()
        return 1
    except BackendFailure as exc:
        click.echo(f"backend failure: {exc}", err=True)
        return 3
    except GatewayError as exc:
        click.echo(f"backend failure: {exc}", err=True)
        return 3
    except (CorpusError, StoreError, EmbeddingFormatError, MetricError,
            AnnotationError, PromptError, ValueError, OSError,
            json.JSONDecodeError) as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
