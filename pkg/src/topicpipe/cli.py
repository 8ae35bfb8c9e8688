"""Command-line entry point: dataset preparation, optimization runs, model inspection,
reporting, and the broker/worker processes.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import artm, metrics, report
from .corpus import (
    EmptyCorpusError,
    EmptyVocabularyError,
    PreprocessConfig,
    build_dataset,
    load_corpus_dir,
    read_raw_documents,
    save_corpus_dir,
)
from .distributed import Broker, BrokerConfig, WorkerConfig, worker_loop
from .evaluation import BrokerEvaluator, LocalEvaluator
from .evolution import BOConfig, GAConfig, MutationProbs, run_bo, run_ga
from .pipeline import execute, pipeline_to_dict
from .surrogate import SurrogateConfig, SurrogateState

log = logging.getLogger(__name__)


class ConfigError(Exception):
    """User-facing configuration problem; maps to exit code 2."""


def _parse_host_port(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ConfigError(f"expected HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


# ---------------------------------------------------------------------------
# preprocess
# ---------------------------------------------------------------------------


def cmd_preprocess(args: argparse.Namespace) -> int:
    config = PreprocessConfig(
        strip_html=not args.keep_html,
        remove_digit_tokens=not args.keep_digit_tokens,
        min_token_len=args.min_token_len,
        languages=tuple(args.languages.split(",")) if args.languages else (),
        extra_stopwords=frozenset(args.extra_stopwords.split(",")) if args.extra_stopwords else frozenset(),
        stem=not args.no_stem,
    )
    raw_docs = read_raw_documents(args.input, fmt=args.format, delimiter=args.delimiter)
    dataset = build_dataset(
        raw_docs,
        config=config,
        min_df=args.min_df,
        max_df_ratio=args.max_df_ratio,
        window_size=args.window_size,
        ppmi_epsilon=args.ppmi_epsilon,
    )
    save_corpus_dir(args.output, dataset)
    drops = dataset.meta["drop_counts"]
    print(
        f"wrote {args.output}: {dataset.corpus.num_docs} docs, "
        f"{dataset.vocabulary.size} tokens, {dataset.corpus.total_tokens} total counts "
        f"(dropped: {drops['empty_after_preprocess']} empty, {drops['no_vocab_tokens']} all-OOV)"
    )
    return 0


# ---------------------------------------------------------------------------
# optimize
# ---------------------------------------------------------------------------

_GA_KEYS = {
    "population_size",
    "generations",
    "crossover_prob",
    "mutation",
    "params_sigma",
    "tournament_size",
    "elitism",
    "early_stop_patience",
    "early_stop_min_delta",
    "init_length_range",
    "n_iters_range",
    "max_true_evals",
}
_BO_KEYS = {"budget", "n_init", "candidates", "local_candidates", "xi"}
_SURROGATE_KEYS = {"kind", "warmup_true_evals", "promote_fraction", "retrain_every"}
_TOP_KEYS = {
    "corpus",
    "num_topics",
    "num_background",
    "representation",
    "algorithm",
    "metric",
    "seed",
    "backend",
    "background_tau",
    "ga",
    "bo",
    "surrogate",
}


def _check_keys(section: dict, allowed: set, label: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown {label} keys: {sorted(unknown)}")


def _build_ga_config(raw: dict) -> GAConfig:
    section = dict(raw.get("ga", {}))
    _check_keys(section, _GA_KEYS, "ga")
    mutation = MutationProbs(**section.pop("mutation", {}))
    for key in ("init_length_range", "n_iters_range"):
        if key in section:
            section[key] = tuple(section[key])
    config = GAConfig(
        mutation=mutation,
        seed=int(raw.get("seed", 0)),
        num_topics=int(raw.get("num_topics", 10)),
        num_background=int(raw.get("num_background", 2)),
        metric=raw.get("metric", metrics.DEFAULT_METRIC),
        background_tau=float(raw.get("background_tau", 0.01)),
        **section,
    )
    if "surrogate" in raw and raw["surrogate"] is not None:
        sur = dict(raw["surrogate"])
        _check_keys(sur, _SURROGATE_KEYS, "surrogate")
        config = replace(config, surrogate=SurrogateConfig(seed=config.seed, **sur))
    return config


def _build_bo_config(raw: dict) -> BOConfig:
    section = dict(raw.get("bo", {}))
    _check_keys(section, _BO_KEYS, "bo")
    return BOConfig(
        seed=int(raw.get("seed", 0)),
        num_topics=int(raw.get("num_topics", 10)),
        num_background=int(raw.get("num_background", 2)),
        metric=raw.get("metric", metrics.DEFAULT_METRIC),
        background_tau=float(raw.get("background_tau", 0.01)),
        **section,
    )


def _validate_run_config(raw: dict) -> None:
    _check_keys(raw, _TOP_KEYS, "run config")
    if "corpus" not in raw:
        raise ConfigError("run config needs a 'corpus' path")
    algorithm = raw.get("algorithm", "ga")
    representation = raw.get("representation", "graph")
    if algorithm not in ("ga", "bo"):
        raise ConfigError(f"algorithm must be 'ga' or 'bo', got {algorithm!r}")
    if representation not in ("graph", "fixed"):
        raise ConfigError(f"representation must be 'graph' or 'fixed', got {representation!r}")
    if algorithm == "bo" and representation != "fixed":
        raise ConfigError("bayesian optimization requires the 'fixed' representation")
    if raw.get("surrogate") is not None and algorithm != "ga":
        raise ConfigError("surrogate assistance applies to the 'ga' algorithm only")
    metric = raw.get("metric", metrics.DEFAULT_METRIC)
    if metric not in metrics.registered_metrics():
        raise ConfigError(f"unknown metric {metric!r}; available: {metrics.registered_metrics()}")


def cmd_optimize(args: argparse.Namespace) -> int:
    config_path = Path(args.config)
    if not config_path.is_file():
        raise ConfigError(f"config file not found: {config_path}")
    config_bytes = config_path.read_bytes()
    try:
        raw = json.loads(config_bytes)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    _validate_run_config(raw)

    corpus_dir = Path(raw["corpus"])
    if not (corpus_dir / "meta.json").is_file():
        raise ConfigError(f"corpus directory not found or incomplete: {corpus_dir}")
    dataset = load_corpus_dir(corpus_dir)
    dataset_id = corpus_dir.resolve().name

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_config.json").write_bytes(config_bytes)

    algorithm = raw.get("algorithm", "ga")
    representation = raw.get("representation", "graph")
    backend = raw.get("backend", "local")

    broker = None
    try:
        if backend == "local":
            evaluator = None  # optimizers build a LocalEvaluator themselves
        else:
            host, port = _parse_host_port(backend)
            broker = Broker(BrokerConfig(host=host, port=port)).start()
            broker.register_dataset(dataset_id)
            print(f"broker listening on {broker.address[0]}:{broker.address[1]}; waiting for workers")
            common = dict(
                num_topics=int(raw.get("num_topics", 10)),
                num_background=int(raw.get("num_background", 2)),
                metric=raw.get("metric", metrics.DEFAULT_METRIC),
                background_tau=float(raw.get("background_tau", 0.01)),
            )
            evaluator = BrokerEvaluator(broker, dataset_id, **common)

        surrogate_state = None
        if algorithm == "ga":
            ga_config = _build_ga_config(raw)
            if ga_config.surrogate is not None:
                surrogate_state = SurrogateState(config=ga_config.surrogate)
            best, history = run_ga(
                dataset,
                ga_config,
                representation=representation,
                evaluator=evaluator,
                surrogate_state=surrogate_state,
            )
            eval_meta = ga_config
        else:
            bo_config = _build_bo_config(raw)
            best, history = run_bo(dataset, bo_config, representation=representation, evaluator=evaluator)
            eval_meta = bo_config
    finally:
        if broker is not None:
            broker.shutdown()

    report.write_history_csv(out_dir / "history.csv", history)
    report.write_timings_csv(out_dir / "timings.csv", history)
    best_pipeline = best.as_pipeline()
    (out_dir / "best_pipeline.json").write_text(
        json.dumps(pipeline_to_dict(best_pipeline), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    if surrogate_state is not None:
        surrogate_state.dataset.dump_csv(out_dir / "surrogate_data.csv")

    # materialize the winning model deterministically from its recorded seed
    fitness_fn = metrics.get_metric(eval_meta.metric)
    result = execute(
        best_pipeline,
        dataset,
        num_topics=eval_meta.num_topics,
        num_background=eval_meta.num_background,
        seed=best.eval_seed,
        fitness_fn=fitness_fn,
        background_tau=eval_meta.background_tau,
    )
    artm.save_model(out_dir / "best_model.bin", result.model)
    (out_dir / "top_words.txt").write_text(
        artm.export_top_words(result.model, dataset.vocabulary, k=10), encoding="utf-8"
    )
    summary = {
        "algorithm": algorithm,
        "representation": representation,
        "best_fitness": best.fitness,
        "best_eval_seed": best.eval_seed,
        "generations_recorded": len(history),
        "true_evals_total": sum(r.true_evals for r in history),
        "surrogate_evals_total": sum(r.surrogate_evals for r in history),
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"best fitness {best.fitness:.6f}; artifacts in {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# topwords / report
# ---------------------------------------------------------------------------


def cmd_topwords(args: argparse.Namespace) -> int:
    if args.k < 1:
        raise ConfigError("k must be >= 1")
    model_path = Path(args.model)
    if not model_path.is_file():
        raise ConfigError(f"model file not found: {model_path}")
    corpus_dir = Path(args.corpus)
    if not (corpus_dir / "vocab.tsv").is_file():
        raise ConfigError(f"corpus directory not found or incomplete: {corpus_dir}")
    model = artm.load_model(model_path)
    dataset = load_corpus_dir(corpus_dir)
    if model.num_words != dataset.vocabulary.size:
        raise ConfigError(
            f"model vocabulary size {model.num_words} does not match corpus {dataset.vocabulary.size}"
        )
    lines = []
    for t in range(model.num_topics):
        label = f"{t}[bg]" if t < model.num_background else str(t)
        for i in artm.top_token_indices(model, t, args.k):
            lines.append(f"{label}\t{dataset.vocabulary.tokens[i]}\t{model.phi[i, t]:.10g}")
    output = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(output, encoding="utf-8")
    else:
        sys.stdout.write(output)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    run_dirs = [Path(d) for d in args.run_dirs]
    for d in run_dirs:
        if not (d / "history.csv").is_file():
            raise ConfigError(f"no history.csv under {d}")
    written = []
    for d in run_dirs:
        written += report.write_run_report(d, out_dir=args.out if len(run_dirs) == 1 else None)
    if len(run_dirs) > 1:
        out = Path(args.out) if args.out else run_dirs[0].parent / "aggregate"
        written += report.write_aggregate_report(run_dirs, out)
    for path in written:
        print(path)
    return 0


# ---------------------------------------------------------------------------
# broker / worker
# ---------------------------------------------------------------------------


def cmd_broker(args: argparse.Namespace) -> int:
    host, port = _parse_host_port(args.listen)
    broker = Broker(BrokerConfig(host=host, port=port, liveness_timeout_s=args.liveness_timeout)).start()
    print(f"broker listening on {broker.address[0]}:{broker.address[1]} (Ctrl-C to stop)")
    print("note: batches are submitted by an embedding process such as `optimize` with a broker backend")
    try:
        import time as _time

        while True:
            _time.sleep(1)
    except KeyboardInterrupt:
        pass
    finally:
        broker.shutdown()
    return 0


def cmd_worker(args: argparse.Namespace) -> int:
    host, port = _parse_host_port(args.broker)
    store = Path(args.store)
    if not store.is_dir():
        raise ConfigError(f"store directory not found: {store}")
    config = WorkerConfig(
        broker_host=host,
        broker_port=port,
        store_path=str(store),
        worker_id=args.worker_id or "",
        heartbeat_s=args.heartbeat_s,
    )
    try:
        worker_loop(config)
    except KeyboardInterrupt:
        pass
    return 0


# ---------------------------------------------------------------------------
# parser wiring
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="topicpipe",
        description="Train staged-regularizer topic models and optimize their training strategy.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="turn raw text into a corpus directory")
    p.add_argument("input", help="UTF-8 text file: one document per line, or two-column (id, text)")
    p.add_argument("output", help="corpus directory to write")
    p.add_argument("--format", choices=("lines", "tsv"), default="lines")
    p.add_argument("--delimiter", default="\t")
    p.add_argument("--min-df", type=int, default=1)
    p.add_argument("--max-df-ratio", type=float, default=1.0)
    p.add_argument("--window-size", type=int, default=10)
    p.add_argument("--min-token-len", type=int, default=2)
    p.add_argument("--languages", default="english,russian")
    p.add_argument("--extra-stopwords", default="", help="comma-separated additions")
    p.add_argument("--no-stem", action="store_true")
    p.add_argument("--keep-html", action="store_true")
    p.add_argument("--keep-digit-tokens", action="store_true")
    p.add_argument("--ppmi-epsilon", type=float, default=1e-12)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("optimize", help="run a GA or BO optimization described by a JSON config")
    p.add_argument("config", help="run config JSON")
    p.add_argument("--out", required=True, help="run directory to write")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("topwords", help="list the top-k tokens of each topic in a saved model")
    p.add_argument("model", help="model file (best_model.bin)")
    p.add_argument("--corpus", required=True, help="corpus directory the model was trained on")
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--out", default="", help="write to a file instead of stdout")
    p.set_defaults(func=cmd_topwords)

    p = sub.add_parser("report", help="emit plot-data tables and figures for run directories")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", default="", help="output directory (default: <run_dir>/report)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("broker", help="run a task broker for distributed evaluation")
    p.add_argument("--listen", required=True, metavar="HOST:PORT")
    p.add_argument("--liveness-timeout", type=float, default=30.0)
    p.set_defaults(func=cmd_broker)

    p = sub.add_parser("worker", help="run an evaluation worker against a broker")
    p.add_argument("--broker", required=True, metavar="HOST:PORT")
    p.add_argument("--store", required=True, help="directory whose subdirectories are corpus datasets")
    p.add_argument("--worker-id", default="")
    p.add_argument("--heartbeat-s", type=float, default=5.0)
    p.set_defaults(func=cmd_worker)

    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("AUTOTM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, EmptyCorpusError, EmptyVocabularyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
