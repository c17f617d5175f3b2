"""Leakage-free evaluation.

Splits and cross-validation folds are assigned at cluster granularity so
no document ever straddles a train/test boundary.  Folds are stratified by
(class x feature-group x size-bucket) and their document-level feature
distributions are re-checked for homogeneity with chi-squared tests,
reshuffling on rejection.  The headline metric is pooled ROC AUC computed
by the midrank method with ties counted as half.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from random import Random
from typing import Optional, Sequence

from .bias import (
    NEGATIVE,
    POSITIVE,
    BiasReport,
    ContingencyTable,
    FeatureSpec,
    TestResult,
    audit,
    chi_squared_test,
)
from .corpus import Corpus
from .errors import (
    DegenerateTableError,
    EmptyInputError,
    InputError,
    UndefinedMetricError,
    UnsplittableError,
)
from .model import (
    TrainConfig,
    build_vocabulary,
    feature_importance,
    train,
    vectorize_cluster,
)
from .sampling import DEFAULT_SIZE_BUCKETS, LabeledCluster, stratum_key


def split(
    labeled: Sequence[LabeledCluster],
    test_fraction: float,
    seed: int,
) -> tuple[list[LabeledCluster], list[LabeledCluster]]:
    """Class-stratified random split at cluster granularity."""
    if not 0.0 < test_fraction < 1.0:
        raise InputError("test_fraction must be in (0, 1)")
    by_class: dict[str, list[LabeledCluster]] = defaultdict(list)
    for lc in labeled:
        by_class[lc.label].append(lc)
    if set(by_class) != {POSITIVE, NEGATIVE}:
        raise UnsplittableError("both classes are required")
    rng = Random(seed)
    train_side: list[LabeledCluster] = []
    test_side: list[LabeledCluster] = []
    for label in (POSITIVE, NEGATIVE):
        group = sorted(by_class[label], key=lambda lc: lc.cluster.id)
        if len(group) < 2:
            raise UnsplittableError(f"class {label!r} has fewer than 2 clusters")
        rng.shuffle(group)
        n_test = min(len(group) - 1, max(1, round(test_fraction * len(group))))
        test_side.extend(group[:n_test])
        train_side.extend(group[n_test:])
    train_side.sort(key=lambda lc: lc.cluster.id)
    test_side.sort(key=lambda lc: lc.cluster.id)
    return train_side, test_side


@dataclass
class FoldPlan:
    k: int
    assignment: dict[str, int]  # cluster id -> fold index
    conditioned_features: tuple[str, ...]
    homogeneity: dict[str, TestResult]  # "feature/class" -> result
    warnings: tuple[str, ...] = ()
    attempts: int = 1

    def fold_ids(self, fold: int) -> set[str]:
        return {cid for cid, f in self.assignment.items() if f == fold}

    def flagged(self) -> list[str]:
        return sorted(k for k, r in self.homogeneity.items() if r.rejected)

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "attempts": self.attempts,
            "conditioned_features": list(self.conditioned_features),
            "warnings": list(self.warnings),
            "assignment": dict(sorted(self.assignment.items())),
            "homogeneity": {
                key: {
                    "statistic": r.statistic,
                    "degrees_of_freedom": r.degrees_of_freedom,
                    "p_value": r.p_value,
                    "alpha": r.alpha,
                    "rejected": r.rejected,
                }
                for key, r in sorted(self.homogeneity.items())
            },
        }


def _assign_folds(
    labeled: Sequence[LabeledCluster],
    corpus: Corpus,
    k: int,
    features: Sequence[FeatureSpec],
    size_buckets: Sequence[int],
    rng: Random,
) -> tuple[dict[str, int], list[str]]:
    """Deal clusters round-robin within (class, feature-groups, bucket)
    strata, carrying the fold cursor across strata of the same class so
    per-class fold sizes stay within one of each other."""
    strata: dict[tuple, list[str]] = defaultdict(list)
    for lc in labeled:
        key = (lc.label,) + stratum_key(lc.cluster, corpus, features, size_buckets)
        strata[key].append(lc.cluster.id)
    warnings = []
    assignment: dict[str, int] = {}
    cursor: dict[str, int] = {POSITIVE: 0, NEGATIVE: 0}
    for key in sorted(strata):
        ids = sorted(strata[key])
        if len(ids) < k:
            warnings.append(
                f"stratum {'|'.join(key)} has {len(ids)} clusters (< {k}); "
                "class-level balance only"
            )
        rng.shuffle(ids)
        label = key[0]
        for cid in ids:
            fold = cursor[label] % k
            assignment[cid] = fold
            cursor[label] += 1
    return assignment, warnings


def _homogeneity_tests(
    labeled: Sequence[LabeledCluster],
    corpus: Corpus,
    assignment: dict[str, int],
    k: int,
    features: Sequence[FeatureSpec],
    alpha: float,
) -> dict[str, TestResult]:
    """Chi-squared tests of document-level feature group x fold, per class.

    A feature constant within a class is trivially homogeneous.
    """
    results: dict[str, TestResult] = {}
    for feature in features:
        for label in (POSITIVE, NEGATIVE):
            counts: dict[str, list[int]] = defaultdict(lambda: [0] * k)
            for lc in labeled:
                if lc.label != label:
                    continue
                fold = assignment[lc.cluster.id]
                for doc_id in lc.cluster.members:
                    group = feature.group_of(corpus.get(doc_id))
                    counts[group][fold] += 1
            key = f"{feature.name}/{label}"
            rows = sorted(counts)
            try:
                table = ContingencyTable(
                    row_labels=tuple(rows),
                    col_labels=tuple(f"fold{i}" for i in range(k)),
                    counts=tuple(tuple(counts[g]) for g in rows),
                )
                results[key] = chi_squared_test(table, alpha)
            except DegenerateTableError:
                results[key] = TestResult(0.0, 1, 1.0, alpha, False)
    return results


def make_folds(
    corpus: Corpus,
    labeled: Sequence[LabeledCluster],
    k: int,
    features: Sequence[FeatureSpec] = (),
    alpha: float = 0.05,
    seed: int = 0,
    max_retries: int = 50,
    size_buckets: Sequence[int] = DEFAULT_SIZE_BUCKETS,
) -> FoldPlan:
    """Stratified, bias-conditioned cross-validation folds.

    Retries the within-stratum shuffle while any homogeneity test rejects,
    up to max_retries, then returns the best attempt seen (fewest
    rejections); a plan can therefore come back flagged.
    """
    if k < 2:
        raise InputError("k must be >= 2")
    per_class = Counter(lc.label for lc in labeled)
    if per_class.get(POSITIVE, 0) < k or per_class.get(NEGATIVE, 0) < k:
        raise InputError(f"need at least k={k} clusters of each class")
    ids = [lc.cluster.id for lc in labeled]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate cluster ids in labeled set")

    best: Optional[tuple[int, dict[str, int], list[str], dict[str, TestResult], int]] = None
    for attempt in range(max_retries + 1):
        rng = Random(f"{seed}:{attempt}")
        assignment, warnings = _assign_folds(labeled, corpus, k, features, size_buckets, rng)
        results = _homogeneity_tests(labeled, corpus, assignment, k, features, alpha)
        rejections = sum(1 for r in results.values() if r.rejected)
        if best is None or rejections < best[0]:
            best = (rejections, assignment, warnings, results, attempt + 1)
        if rejections == 0:
            break
    assert best is not None
    _, assignment, warnings, results, attempts = best
    plan = FoldPlan(
        k=k,
        assignment=assignment,
        conditioned_features=tuple(f.name for f in features),
        homogeneity=results,
        warnings=tuple(warnings),
        attempts=attempts,
    )
    for fold in range(k):
        fold_labels = {lc.label for lc in labeled if assignment[lc.cluster.id] == fold}
        if fold_labels != {POSITIVE, NEGATIVE}:
            raise InputError(f"fold {fold} lacks a class; too few clusters")
    return plan


def roc_curve(scores: Sequence[tuple[float, str]]) -> list[tuple[float, float, float]]:
    """(threshold, fpr, tpr) points sweeping unique scores descending.

    The leading point is (inf, 0, 0); the final point is always (min
    score, 1, 1).
    """
    n_pos = sum(1 for _, label in scores if label == POSITIVE)
    n_neg = len(scores) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC needs both classes")
    by_score: dict[float, list[int]] = defaultdict(lambda: [0, 0])
    for value, label in scores:
        by_score[value][0 if label == POSITIVE else 1] += 1
    points = [(math.inf, 0.0, 0.0)]
    tp = fp = 0
    for value in sorted(by_score, reverse=True):
        tp += by_score[value][0]
        fp += by_score[value][1]
        points.append((value, fp / n_neg, tp / n_pos))
    return points


def roc_auc(scores: Sequence[tuple[float, str]]) -> tuple[float, list[tuple[float, float]]]:
    """Pairwise-rank AUC (ties count 0.5) plus the ROC points.

    Computed with midranks: AUC = (R_pos - P(P+1)/2) / (P*N) where R_pos
    is the positive midrank sum.
    """
    n_pos = sum(1 for _, label in scores if label == POSITIVE)
    n_neg = len(scores) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes")
    ordered = sorted(scores, key=lambda sl: sl[0])
    rank_sum = 0.0
    i = 0
    while i < len(ordered):
        j = i
        while j < len(ordered) and ordered[j][0] == ordered[i][0]:
            j += 1
        midrank = (i + 1 + j) / 2.0  # average of ranks i+1 .. j
        rank_sum += midrank * sum(1 for s, l in ordered[i:j] if l == POSITIVE)
        i = j
    auc = (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    points = [(fpr, tpr) for _, fpr, tpr in roc_curve(scores)]
    return auc, points


@dataclass
class EvalReport:
    auc: float
    fold_aucs: tuple[float, ...]
    roc_points: tuple[tuple[float, float], ...]
    roc_thresholds: tuple[float, ...]
    top_features: tuple[tuple[str, float], ...]
    bias_recheck: Optional[BiasReport]
    scores: tuple[tuple[str, float, str], ...] = ()  # (cluster id, score, label)

    def to_json(self) -> dict:
        return {
            "auc": self.auc,
            "fold_aucs": list(self.fold_aucs),
            "top_features": [[t, w] for t, w in self.top_features],
            "bias_recheck": None if self.bias_recheck is None else self.bias_recheck.to_json(),
            "scores": [[cid, s, label] for cid, s, label in self.scores],
        }


def cross_validate(
    corpus: Corpus,
    labeled: Sequence[LabeledCluster],
    plan: FoldPlan,
    vocab_orders: Sequence[int] = (1,),
    min_df: int = 1,
    max_vocab: Optional[int] = 50000,
    weighting: str = "tf",
    train_config: Optional[TrainConfig] = None,
    features: Sequence[FeatureSpec] = (),
    alpha: float = 0.05,
    top_k: int = 25,
) -> EvalReport:
    """Per-fold train/score with fold-local vocabularies.

    The vocabulary for each fold is built from training-fold documents
    only, so test-fold tokens can never leak into a model.  Pooled AUC is
    the headline number; per-fold AUCs show dispersion.
    """
    if not labeled:
        raise EmptyInputError("no labeled clusters")
    missing = [lc.cluster.id for lc in labeled if lc.cluster.id not in plan.assignment]
    if missing:
        raise InputError(f"fold plan does not cover clusters: {missing[:3]}")
    train_config = train_config or TrainConfig()

    pooled: list[tuple[float, str]] = []
    pooled_with_ids: list[tuple[str, float, str]] = []
    fold_aucs = []
    for fold in range(plan.k):
        train_side = [lc for lc in labeled if plan.assignment[lc.cluster.id] != fold]
        test_side = [lc for lc in labeled if plan.assignment[lc.cluster.id] == fold]
        train_docs = [
            corpus.get(doc_id)
            for lc in train_side
            for doc_id in sorted(lc.cluster.members)
        ]
        vocab = build_vocabulary(train_docs, vocab_orders, min_df, max_vocab)
        examples = [
            (vectorize_cluster(lc.cluster, corpus, vocab, weighting), lc.label)
            for lc in train_side
        ]
        model = train(examples, vocab, train_config)
        fold_scores = []
        for lc in test_side:
            vec = vectorize_cluster(lc.cluster, corpus, vocab, weighting)
            fold_scores.append((model.score(vec), lc.label))
            pooled_with_ids.append((lc.cluster.id, fold_scores[-1][0], lc.label))
        pooled.extend(fold_scores)
        fold_auc, _ = roc_auc(fold_scores)
        fold_aucs.append(fold_auc)

    auc, points = roc_auc(pooled)
    thresholds = [t for t, _, _ in roc_curve(pooled)]

    # Final model over the full labeled set for the feature ranking.
    all_docs = [
        corpus.get(doc_id) for lc in labeled for doc_id in sorted(lc.cluster.members)
    ]
    vocab = build_vocabulary(all_docs, vocab_orders, min_df, max_vocab)
    examples = [
        (vectorize_cluster(lc.cluster, corpus, vocab, weighting), lc.label)
        for lc in labeled
    ]
    final_model = train(examples, vocab, train_config)
    top = feature_importance(final_model, top_k)

    recheck = audit(corpus, labeled, features, alpha) if features else None
    pooled_with_ids.sort(key=lambda row: row[0])
    return EvalReport(
        auc=auc,
        fold_aucs=tuple(fold_aucs),
        roc_points=tuple(points),
        roc_thresholds=tuple(thresholds),
        top_features=tuple(top),
        bias_recheck=recheck,
        scores=tuple(pooled_with_ids),
    )


def write_report(
    report: EvalReport,
    json_path: str | Path,
    roc_csv_path: Optional[str | Path] = None,
    text_path: Optional[str | Path] = None,
    plan: Optional[FoldPlan] = None,
) -> None:
    payload = report.to_json()
    if plan is not None:
        payload["homogeneity"] = plan.to_json()["homogeneity"]
        payload["fold_warnings"] = list(plan.warnings)
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if roc_csv_path is not None:
        with open(roc_csv_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "fpr", "tpr"])
            for threshold, (fpr, tpr) in zip(report.roc_thresholds, report.roc_points):
                writer.writerow([threshold, fpr, tpr])
    if text_path is not None:
        lines = [
            f"pooled AUC: {report.auc:.4f}",
            "per-fold AUCs: " + ", ".join(f"{a:.4f}" for a in report.fold_aucs),
            "",
            "top features (|weight| desc):",
        ]
        for token, weight in report.top_features:
            lines.append(f"  {token:<24} {weight:+.5f}")
        if report.bias_recheck is not None:
            lines.append("")
            lines.append(
                "bias recheck flagged: "
                + (", ".join(report.bias_recheck.flagged_features) or "(none)")
            )
        with open(text_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
