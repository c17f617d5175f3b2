"""Command-line pipeline driver.

Each subcommand reads its declared inputs, writes machine-readable
artifacts into the output directory, and prints a one-line summary;
``pipeline`` chains every stage.  Outputs are deterministic: rerunning
with the same config and inputs reproduces byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from collections import Counter
from pathlib import Path
from typing import Optional, Sequence

from . import bias as bias_mod
from . import clustering as clustering_mod
from . import corpus as corpus_mod
from . import evaluate as evaluate_mod
from . import model as model_mod
from . import sampling as sampling_mod
from . import synth as synth_mod
from .config import PipelineConfig, config_help, load_config, require_paths, validate
from .errors import ConfigError, PipelineError


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _features_from_names(names: Sequence[str]) -> list[bias_mod.FeatureSpec]:
    return [bias_mod.FeatureSpec(name) for name in names]


def _load_gazetteer(config: PipelineConfig) -> Optional[corpus_mod.Gazetteer]:
    if config.gazetteer_path is None:
        return None
    return corpus_mod.Gazetteer.from_file(config.gazetteer_path)


def _load_clean_corpus(out: Path) -> corpus_mod.Corpus:
    path = out / "corpus_clean.jsonl"
    if not path.exists():
        raise ConfigError(f"{path} not found; run the ingest stage first")
    corpus, _ = corpus_mod.ingest(path)
    return corpus


def _load_clusters(out: Path) -> clustering_mod.Clustering:
    path = out / "clusters.csv"
    if not path.exists():
        raise ConfigError(f"{path} not found; run the cluster stage first")
    return clustering_mod.read_clustering(path)


def _load_labeled(out: Path, clustering: clustering_mod.Clustering):
    path = out / "labels.csv"
    if not path.exists():
        raise ConfigError(f"{path} not found; run the sample stage first")
    labeled, missing = sampling_mod.read_labels(path, clustering)
    return labeled, missing


def _maybe_remove_tokens(config: PipelineConfig, corpus: corpus_mod.Corpus) -> corpus_mod.Corpus:
    if config.remove_lexicon_path is None:
        return corpus
    with open(config.remove_lexicon_path, "r", encoding="utf-8") as fh:
        lexicon = [line.strip().lower() for line in fh if line.strip()]
    return corpus_mod.remove_tokens(corpus, lexicon)


# --- stages -------------------------------------------------------------


def stage_ingest(config: PipelineConfig, out: Path) -> corpus_mod.Corpus:
    require_paths(config, "corpus_path")
    gazetteer = _load_gazetteer(config)
    corpus, stats = corpus_mod.ingest(config.corpus_path, config.ingest_limit, gazetteer)
    corpus_mod.write_corpus(corpus, out / "corpus_clean.jsonl")
    _write_json(
        out / "ingest_summary.json",
        {
            "documents": stats.ingested,
            "skipped": stats.skipped,
            "total_lines": stats.total_lines,
            "schema": sorted(corpus.schema),
        },
    )
    print(f"ingest: {stats.ingested} documents, {stats.skipped} skipped -> {out / 'corpus_clean.jsonl'}")
    return corpus


def stage_cluster(
    config: PipelineConfig,
    out: Path,
    corpus: corpus_mod.Corpus,
    export_graph: bool = False,
) -> clustering_mod.Clustering:
    graph_config = clustering_mod.GraphConfig(
        tau_text=config.tau_text,
        shingle_len=config.shingle_len,
        use_phones=config.use_phones,
        use_text=config.use_text,
        use_location_date=config.use_location_date,
        date_window_days=config.date_window_days,
        rare_shingle_df_cap=config.rare_shingle_df_cap,
        all_pairs_cutoff=config.all_pairs_cutoff,
    )
    graph = clustering_mod.build_graph(corpus, graph_config)
    if config.consensus_runs == 1:
        clustering = clustering_mod.kwikcluster(graph, config.seed)
    else:
        runs = [
            clustering_mod.kwikcluster(graph, config.seed + i)
            for i in range(config.consensus_runs)
        ]
        clustering = clustering_mod.consensus(runs, config.consensus_threshold)
    if config.refine_passes > 0:
        clustering = clustering_mod.refine(clustering, graph, config.refine_passes)
    clustering_mod.write_clustering(clustering, out / "clusters.csv")
    if export_graph:
        clustering_mod.write_graph(graph, out / "graph.csv")
    cost = clustering_mod.disagreement_cost(clustering, graph)
    _write_json(
        out / "cluster_summary.json",
        {
            "clusters": len(clustering),
            "edges": graph.edge_count(),
            "disagreement_cost": cost,
            "largest_cluster": max(clustering.sizes(), default=0),
        },
    )
    print(
        f"cluster: {len(clustering)} clusters over {len(corpus)} documents "
        f"({graph.edge_count()} edges, cost {cost}) -> {out / 'clusters.csv'}"
    )
    return clustering


def stage_sample(
    config: PipelineConfig,
    out: Path,
    corpus: corpus_mod.Corpus,
    clustering: clustering_mod.Clustering,
) -> list[sampling_mod.LabeledCluster]:
    require_paths(config, "labels_path")
    expert, missing = sampling_mod.read_labels(config.labels_path, clustering)
    positives = [lc for lc in expert if lc.label == bias_mod.POSITIVE]
    negatives = [lc for lc in expert if lc.label == bias_mod.NEGATIVE]
    if not positives:
        raise ConfigError("paths.labels: no positive clusters resolved against the clustering")
    want = max(0, round(config.sampling_ratio * len(positives)) - len(negatives))
    plan_blob: dict = {"mode": config.sampling_mode, "requested": want}
    sampled: list[sampling_mod.LabeledCluster] = []
    if want > 0:
        exclude = {lc.cluster.id for lc in expert}
        if config.sampling_mode == "random":
            sampled = sampling_mod.random_negatives(clustering, exclude, want, config.seed + 1)
        else:
            features = _features_from_names(config.sampling_features)
            sampled, plan = sampling_mod.conditioned_negatives(
                clustering,
                corpus,
                positives,
                features,
                want,
                config.seed + 1,
                config.size_buckets,
            )
            plan_blob["plan"] = plan.to_json()
    labeled = expert + sampled
    sampling_mod.write_labels(labeled, out / "labels.csv")
    plan_blob["unresolved_label_ids"] = sorted(missing)
    plan_blob["positives"] = len(positives)
    plan_blob["negatives"] = len(negatives) + len(sampled)
    _write_json(out / "sample_summary.json", plan_blob)
    print(
        f"sample: {len(positives)} positive, {len(negatives) + len(sampled)} negative clusters "
        f"({config.sampling_mode}, {len(missing)} unresolved label ids) -> {out / 'labels.csv'}"
    )
    return labeled


def stage_diagnose(
    config: PipelineConfig,
    out: Path,
    corpus: corpus_mod.Corpus,
    labeled: Sequence[sampling_mod.LabeledCluster],
) -> bias_mod.BiasReport:
    features = _features_from_names(config.bias_features)
    report = bias_mod.audit(corpus, labeled, features, config.alpha, config.correction)
    bias_mod.write_report(report, out / "bias_report.json", out / "bias_report.txt")

    extras: dict = {}
    pos_sizes = [float(lc.cluster.size()) for lc in labeled if lc.label == bias_mod.POSITIVE]
    neg_sizes = [float(lc.cluster.size()) for lc in labeled if lc.label == bias_mod.NEGATIVE]
    if pos_sizes and neg_sizes:
        ks = bias_mod.ks_two_sample(pos_sizes, neg_sizes, config.alpha)
        extras["cluster_size_ks"] = {
            "statistic": ks.statistic,
            "p_value": ks.p_value,
            "rejected": ks.rejected,
        }
        extras["domain_renyi_order2"] = _domain_renyi(corpus, labeled)
    _write_json(
        out / "diagnose_summary.json",
        {"flagged": list(report.flagged_features), "extras": extras},
    )
    flagged = ", ".join(report.flagged_features) or "(none)"
    print(f"diagnose: flagged features: {flagged} -> {out / 'bias_report.json'}")
    return report


def _domain_renyi(corpus, labeled) -> float:
    """Order-2 Renyi divergence of positive vs negative domain mixes."""
    pos: Counter[str] = Counter()
    neg: Counter[str] = Counter()
    for lc in labeled:
        side = pos if lc.label == bias_mod.POSITIVE else neg
        for doc_id in lc.cluster.members:
            side[corpus.get(doc_id).source_domain] += 1
    domains = sorted(set(pos) | set(neg))
    p_total, q_total = sum(pos.values()), sum(neg.values())
    p = [pos.get(d, 0) / p_total for d in domains]
    q = [neg.get(d, 0) / q_total for d in domains]
    value = bias_mod.renyi_divergence(p, q, 2.0)
    return value if value != float("inf") else -1.0  # -1 encodes infinity in JSON


def stage_train(
    config: PipelineConfig,
    out: Path,
    corpus: corpus_mod.Corpus,
    labeled: Sequence[sampling_mod.LabeledCluster],
) -> model_mod.RiskModel:
    working = _maybe_remove_tokens(config, corpus)
    docs = [
        working.get(doc_id)
        for lc in labeled
        for doc_id in sorted(lc.cluster.members)
    ]
    vocab = model_mod.build_vocabulary(docs, config.vocab_orders, config.min_df, config.max_vocab)
    examples = [
        (model_mod.vectorize_cluster(lc.cluster, working, vocab, config.weighting), lc.label)
        for lc in labeled
    ]
    train_config = model_mod.TrainConfig(
        loss=config.loss,
        penalty=config.penalty,
        lam=config.lam,
        epochs=config.epochs,
        learning_rate=config.learning_rate,
        seed=config.seed + 3,
    )
    risk_model = model_mod.train(examples, vocab, train_config)
    model_mod.save_model(risk_model, out / "model.json")
    ranking = model_mod.feature_importance(risk_model, config.top_k)
    with open(out / "feature_importance.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["token", "weight"])
        for token, weight in ranking:
            writer.writerow([token, weight])
    _write_json(
        out / "train_summary.json",
        {
            "examples": len(examples),
            "vocabulary": len(vocab),
            "final_objective": risk_model.metadata["final_objective"],
            "epochs": risk_model.metadata["epochs"],
        },
    )
    print(
        f"train: {len(examples)} cluster examples, vocab {len(vocab)}, "
        f"objective {risk_model.metadata['final_objective']:.5f} -> {out / 'model.json'}"
    )
    return risk_model


def stage_evaluate(
    config: PipelineConfig,
    out: Path,
    corpus: corpus_mod.Corpus,
    labeled: Sequence[sampling_mod.LabeledCluster],
) -> evaluate_mod.EvalReport:
    working = _maybe_remove_tokens(config, corpus)
    features = _features_from_names(config.bias_features)
    plan = evaluate_mod.make_folds(
        working,
        labeled,
        config.folds,
        features,
        config.alpha,
        config.seed + 2,
        config.max_retries,
        config.size_buckets,
    )
    _write_json(out / "fold_plan.json", plan.to_json())
    train_config = model_mod.TrainConfig(
        loss=config.loss,
        penalty=config.penalty,
        lam=config.lam,
        epochs=config.epochs,
        learning_rate=config.learning_rate,
        seed=config.seed + 3,
    )
    report = evaluate_mod.cross_validate(
        working,
        labeled,
        plan,
        config.vocab_orders,
        config.min_df,
        config.max_vocab,
        config.weighting,
        train_config,
        features,
        config.alpha,
        config.top_k,
    )
    evaluate_mod.write_report(
        report, out / "eval_report.json", out / "roc.csv", out / "eval_report.txt", plan
    )
    fold_aucs = ", ".join(f"{a:.3f}" for a in report.fold_aucs)
    print(f"evaluate: pooled AUC {report.auc:.4f} (folds: {fold_aucs}) -> {out / 'eval_report.json'}")
    return report


def stage_indicators(
    config: PipelineConfig,
    out: Path,
    corpus: corpus_mod.Corpus,
    clustering: clustering_mod.Clustering,
) -> int:
    require_paths(config, "rules_path")
    rules = model_mod.load_rules(config.rules_path)
    rule_names = [r.name for r in rules]
    with open(out / "indicators.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster_id"] + rule_names)
        for cluster in clustering:
            flags = model_mod.apply_indicators(cluster, corpus, rules)
            writer.writerow([cluster.id] + [str(flags[n]).lower() for n in rule_names])
    print(f"indicators: {len(rule_names)} rules over {len(clustering)} clusters -> {out / 'indicators.csv'}")
    return len(rule_names)


# --- commands -----------------------------------------------------------


def _build_config(args: argparse.Namespace) -> PipelineConfig:
    if getattr(args, "config", None):
        config = load_config(args.config)
    else:
        config = PipelineConfig()
    for attr in ("corpus_path", "labels_path", "gazetteer_path", "rules_path"):
        flag = attr.replace("_path", "")
        value = getattr(args, flag, None)
        if value:
            setattr(config, attr, value)
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    validate(config)
    return config


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args: argparse.Namespace) -> int:
    config = synth_mod.SynthConfig(
        num_clusters=args.num_clusters,
        positive_fraction=args.positive_fraction,
        domain_skew=args.domain_skew,
        duplication_rate=args.duplication,
        vocab_size=args.vocab_size,
        doc_tokens=args.doc_tokens,
        seed=args.seed if args.seed is not None else 0,
    )
    result = synth_mod.generate(config)
    paths = synth_mod.write_artifacts(result, _out_dir(args))
    n_pos = len(result.positive_ids())
    print(
        f"synth: {len(result.corpus)} documents in {len(result.clustering)} clusters "
        f"({n_pos} positive) -> {paths['corpus']}"
    )
    return 0


def cmd_ingest(args: argparse.Namespace) -> int:
    config = _build_config(args)
    stage_ingest(config, _out_dir(args))
    return 0


def cmd_cluster(args: argparse.Namespace) -> int:
    config = _build_config(args)
    out = _out_dir(args)
    corpus = _load_clean_corpus(out)
    stage_cluster(config, out, corpus, export_graph=args.export_graph)
    return 0


def cmd_sample(args: argparse.Namespace) -> int:
    config = _build_config(args)
    if args.mode:
        config.sampling_mode = args.mode
    out = _out_dir(args)
    corpus = _load_clean_corpus(out)
    clustering = _load_clusters(out)
    stage_sample(config, out, corpus, clustering)
    return 0


def cmd_diagnose(args: argparse.Namespace) -> int:
    if args.table2:
        table = synth_mod.table2_fixture()
        result = bias_mod.chi_squared_test(table, 0.05)
        print(
            f"diagnose: table2 chi-squared statistic {result.statistic:.1f}, "
            f"df {result.degrees_of_freedom}, p {result.p_value:.3g} "
            f"({'rejected' if result.rejected else 'not rejected'} at alpha 0.05)"
        )
        return 0
    config = _build_config(args)
    out = _out_dir(args)
    corpus = _load_clean_corpus(out)
    clustering = _load_clusters(out)
    labeled, _ = _load_labeled(out, clustering)
    stage_diagnose(config, out, corpus, labeled)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = _build_config(args)
    out = _out_dir(args)
    corpus = _load_clean_corpus(out)
    clustering = _load_clusters(out)
    labeled, _ = _load_labeled(out, clustering)
    stage_train(config, out, corpus, labeled)
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _build_config(args)
    out = _out_dir(args)
    corpus = _load_clean_corpus(out)
    clustering = _load_clusters(out)
    labeled, _ = _load_labeled(out, clustering)
    stage_evaluate(config, out, corpus, labeled)
    return 0


def cmd_indicators(args: argparse.Namespace) -> int:
    config = _build_config(args)
    out = _out_dir(args)
    corpus = _load_clean_corpus(out)
    clustering = _load_clusters(out)
    stage_indicators(config, out, corpus, clustering)
    return 0


def cmd_pipeline(args: argparse.Namespace) -> int:
    config = _build_config(args)
    out = _out_dir(args)
    stage = "ingest"
    try:
        corpus = stage_ingest(config, out)
        stage = "cluster"
        clustering = stage_cluster(config, out, corpus, export_graph=args.export_graph)
        stage = "sample"
        labeled = stage_sample(config, out, corpus, clustering)
        stage = "diagnose"
        stage_diagnose(config, out, corpus, labeled)
        stage = "train"
        stage_train(config, out, corpus, labeled)
        stage = "evaluate"
        stage_evaluate(config, out, corpus, labeled)
        if config.rules_path is not None:
            stage = "indicators"
            stage_indicators(config, out, corpus, clustering)
    except (PipelineError, OSError) as exc:
        print(f"pipeline failed at stage {stage}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(f"pipeline: all stages complete -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="caserisk",
        description="Bias-aware cluster-level risk scoring pipeline",
        epilog=config_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="pipeline config file")
        p.add_argument("--out", default="out", help="artifact directory (default: out)")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")

    p = sub.add_parser("synth", help="generate a synthetic corpus with ground truth")
    common(p)
    p.add_argument("--num-clusters", type=int, default=200)
    p.add_argument("--positive-fraction", type=float, default=0.3)
    p.add_argument("--domain-skew", type=float, default=0.0)
    p.add_argument("--duplication", type=float, default=0.0)
    p.add_argument("--vocab-size", type=int, default=2000)
    p.add_argument("--doc-tokens", type=int, default=30)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="ingest and normalize a corpus file")
    common(p)
    p.add_argument("--corpus", help="override paths.corpus")
    p.add_argument("--gazetteer", help="override paths.gazetteer")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("cluster", help="build the similarity graph and cluster it")
    common(p)
    p.add_argument("--export-graph", action="store_true", help="also write graph.csv")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("sample", help="draw noisy negative labels")
    common(p)
    p.add_argument("--labels", help="override paths.labels")
    p.add_argument("--mode", choices=["random", "conditioned"], help="override sampling.mode")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("diagnose", help="audit labeled data for feature-class dependence")
    common(p)
    p.add_argument("--table2", action="store_true", help="run the built-in 2x2 fixture instead")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("train", help="train the risk model on all labeled clusters")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="conditioned cross-validation with pooled AUC")
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("indicators", help="evaluate indicator rules per cluster")
    common(p)
    p.add_argument("--rules", help="override paths.rules")
    p.set_defaults(func=cmd_indicators)

    p = sub.add_parser("pipeline", help="run every stage in order")
    common(p)
    p.add_argument("--export-graph", action="store_true", help="also write graph.csv")
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(f"error [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error [{args.command}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
