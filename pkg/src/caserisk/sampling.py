"""Negative-label sampling over clusters.

Noisy negatives come either from uniform random cluster draws or from
conditioned draws that match the positive class's joint distribution over
(feature-group x cluster-size-bucket) strata, which is the sampling-side
mitigation for labeling bias.
"""

from __future__ import annotations

import csv
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from random import Random
from typing import Iterable, Sequence

from .bias import NEGATIVE, POSITIVE, BiasReport, FeatureSpec, audit
from .clustering import Cluster, Clustering
from .corpus import Corpus
from .errors import EmptyInputError, InputError, InsufficientPoolError

SOURCE_EXPERT = "expert"
SOURCE_SAMPLED = "sampled-noisy"

# Geometric buckets for heavy-tailed cluster sizes: 1, 2-4, 5-16, 17-64, 65+.
DEFAULT_SIZE_BUCKETS: tuple[int, ...] = (1, 2, 5, 17, 65)


@dataclass(frozen=True)
class LabeledCluster:
    cluster: Cluster
    label: str
    source: str

    def __post_init__(self):
        if self.label not in (POSITIVE, NEGATIVE):
            raise InputError(f"bad label {self.label!r}")
        if self.source not in (SOURCE_EXPERT, SOURCE_SAMPLED):
            raise InputError(f"bad source {self.source!r}")


def size_bucket(size: int, boundaries: Sequence[int] = DEFAULT_SIZE_BUCKETS) -> str:
    """Bucket label for a cluster size, e.g. "5-16" or "65+"."""
    if size < 1:
        raise InputError("cluster size must be >= 1")
    boundaries = sorted(boundaries)
    if boundaries[0] != 1:
        raise InputError("first size bucket boundary must be 1")
    idx = 0
    for i, lower in enumerate(boundaries):
        if size >= lower:
            idx = i
    lower = boundaries[idx]
    if idx + 1 < len(boundaries):
        upper = boundaries[idx + 1] - 1
        return str(lower) if lower == upper else f"{lower}-{upper}"
    return f"{lower}+"


def cluster_feature_group(
    cluster: Cluster, corpus: Corpus, feature: FeatureSpec
) -> str:
    """Majority feature group over member documents; ties break to the
    lexicographically smallest group."""
    counts: Counter[str] = Counter()
    for doc_id in cluster.members:
        if doc_id not in corpus:
            raise InputError(f"cluster member {doc_id!r} not in corpus")
        counts[feature.group_of(corpus.get(doc_id))] += 1
    top = max(counts.values())
    return min(g for g, c in counts.items() if c == top)


def stratum_key(
    cluster: Cluster,
    corpus: Corpus,
    features: Sequence[FeatureSpec],
    size_buckets: Sequence[int] = DEFAULT_SIZE_BUCKETS,
) -> tuple[str, ...]:
    groups = tuple(cluster_feature_group(cluster, corpus, f) for f in features)
    return groups + (size_bucket(cluster.size(), size_buckets),)


@dataclass
class SamplingPlan:
    """Per-stratum quotas, realized draws, and any deficits."""

    seed: int
    target_counts: dict[tuple[str, ...], int] = field(default_factory=dict)
    drawn_counts: dict[tuple[str, ...], int] = field(default_factory=dict)
    deficits: dict[tuple[str, ...], int] = field(default_factory=dict)

    def reallocated(self) -> int:
        return sum(self.deficits.values())

    def to_json(self) -> dict:
        def keyed(d: dict[tuple[str, ...], int]) -> dict[str, int]:
            return {"|".join(k): v for k, v in sorted(d.items())}

        return {
            "seed": self.seed,
            "target_counts": keyed(self.target_counts),
            "drawn_counts": keyed(self.drawn_counts),
            "deficits": keyed(self.deficits),
        }


def _largest_remainder(total: int, weights: dict[tuple[str, ...], float]) -> dict[tuple[str, ...], int]:
    """Integer quotas summing to `total`, proportional to `weights`."""
    mass = sum(weights.values())
    if mass <= 0:
        raise InputError("weights must have positive mass")
    exact = {k: total * w / mass for k, w in weights.items()}
    quotas = {k: int(v) for k, v in exact.items()}
    short = total - sum(quotas.values())
    remainders = sorted(exact.items(), key=lambda kv: (-(kv[1] - int(kv[1])), kv[0]))
    for k, _ in remainders[:short]:
        quotas[k] += 1
    return quotas


def random_negatives(
    clustering: Clustering,
    exclude: Iterable[str],
    n: int,
    seed: int,
) -> list[LabeledCluster]:
    """Uniform draw of n distinct non-excluded clusters, labeled negative."""
    excluded = set(exclude)
    pool = sorted(c.id for c in clustering if c.id not in excluded)
    if n > len(pool):
        raise InsufficientPoolError(f"requested {n} clusters, pool has {len(pool)}")
    chosen = Random(seed).sample(pool, n)
    return [
        LabeledCluster(clustering.get(cid), NEGATIVE, SOURCE_SAMPLED) for cid in chosen
    ]


def conditioned_negatives(
    clustering: Clustering,
    corpus: Corpus,
    positives: Sequence[LabeledCluster],
    features: Sequence[FeatureSpec],
    n: int,
    seed: int,
    size_buckets: Sequence[int] = DEFAULT_SIZE_BUCKETS,
) -> tuple[list[LabeledCluster], SamplingPlan]:
    """Draw negatives whose (feature-group x size-bucket) distribution
    matches the positive clusters.

    Per-stratum quotas are the largest-remainder rounding of the positive
    empirical distribution; draws within a stratum are uniform without
    replacement.  When a stratum's pool runs dry the deficit is
    re-quota'd proportionally over strata that still have supply
    (preferring strata with positive mass) and recorded on the plan.
    """
    if not positives:
        raise EmptyInputError("no positive clusters to condition on")
    positive_ids = {lc.cluster.id for lc in positives}
    pos_strata: Counter[tuple[str, ...]] = Counter()
    for lc in positives:
        pos_strata[stratum_key(lc.cluster, corpus, features, size_buckets)] += 1

    pools: dict[tuple[str, ...], list[str]] = defaultdict(list)
    for cluster in clustering:
        if cluster.id in positive_ids:
            continue
        pools[stratum_key(cluster, corpus, features, size_buckets)].append(cluster.id)
    for pool in pools.values():
        pool.sort()
    total_pool = sum(len(p) for p in pools.values())
    plan = SamplingPlan(seed=seed)
    if n == 0:
        return [], plan
    weights = {k: float(v) for k, v in pos_strata.items()}
    quotas = _largest_remainder(n, weights)
    if total_pool < n:
        deficits = {
            "|".join(k): q - len(pools.get(k, []))
            for k, q in sorted(quotas.items())
            if q > len(pools.get(k, []))
        }
        raise InsufficientPoolError(
            f"requested {n} negatives, pool has {total_pool}", deficits=deficits
        )
    plan.target_counts = dict(quotas)

    rng = Random(seed)
    chosen: list[str] = []
    pending = dict(quotas)
    while True:
        drawn_this_round = 0
        for key in sorted(pending):
            want = pending[key]
            pool = pools.get(key, [])
            take = min(want, len(pool))
            if take > 0:
                picked = rng.sample(pool, take)
                picked_set = set(picked)
                pools[key] = [c for c in pool if c not in picked_set]
                chosen.extend(picked)
                plan.drawn_counts[key] = plan.drawn_counts.get(key, 0) + take
                drawn_this_round += take
            if want > take:
                plan.deficits[key] = plan.deficits.get(key, 0) + (want - take)
        deficit = n - len(chosen)
        if deficit == 0:
            break
        # Re-quota the deficit over strata that still have supply,
        # proportionally to positive mass when any remains there.
        available = {k: p for k, p in pools.items() if p}
        if not available:
            raise InsufficientPoolError(
                f"pool exhausted with {deficit} still to draw",
                deficits={("|".join(k)): v for k, v in plan.deficits.items()},
            )
        weighted = {k: weights.get(k, 0.0) for k in available}
        if sum(weighted.values()) <= 0:
            weighted = {k: float(len(p)) for k, p in available.items()}
        pending = _largest_remainder(deficit, weighted)
        # Cap each round's asks at supply so the loop always progresses.
        pending = {k: min(v, len(pools[k])) for k, v in pending.items() if v > 0}
        if sum(pending.values()) < deficit:
            # spread the cap-induced shortfall round-robin over supply
            leftover = deficit - sum(pending.values())
            for k in sorted(available, key=lambda k: (-len(pools[k]), k)):
                room = len(pools[k]) - pending.get(k, 0)
                if room <= 0:
                    continue
                add = min(room, leftover)
                pending[k] = pending.get(k, 0) + add
                leftover -= add
                if leftover == 0:
                    break

    labeled = [
        LabeledCluster(clustering.get(cid), NEGATIVE, SOURCE_SAMPLED) for cid in chosen
    ]
    return labeled, plan


def verify_alignment(
    corpus: Corpus,
    positives: Sequence[LabeledCluster],
    negatives: Sequence[LabeledCluster],
    features: Sequence[FeatureSpec],
    alpha: float = 0.05,
) -> BiasReport:
    """Audit the combined labeled set; mitigation succeeded iff nothing is
    flagged."""
    if not positives or not negatives:
        raise EmptyInputError("need both positives and negatives")
    report = audit(corpus, list(positives) + list(negatives), features, alpha)
    return replace(report, mitigation_successful=not report.flagged_features)


def write_labels(labeled: Sequence[LabeledCluster], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster_id", "label", "source"])
        for lc in sorted(labeled, key=lambda x: x.cluster.id):
            writer.writerow([lc.cluster.id, lc.label, lc.source])


def read_labels(
    path: str | Path, clustering: Clustering
) -> tuple[list[LabeledCluster], list[str]]:
    """Resolve a labels CSV against a clustering.

    Returns the resolved labeled clusters and the ids that did not match
    any cluster (left to the caller to report).  Expert labels win over
    sampled ones for the same cluster.
    """
    rows: list[tuple[str, str, str]] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) < {"cluster_id", "label"}:
            raise InputError(f"{path}: expected header cluster_id,label[,source]")
        for row in reader:
            rows.append(
                (row["cluster_id"], row["label"], row.get("source") or SOURCE_EXPERT)
            )
    known = {c.id for c in clustering}
    by_cluster: dict[str, tuple[str, str]] = {}
    missing = []
    for cid, label, source in rows:
        if cid not in known:
            missing.append(cid)
            continue
        current = by_cluster.get(cid)
        if current is not None and current[1] == SOURCE_EXPERT and source != SOURCE_EXPERT:
            continue  # expert labels are never overwritten
        by_cluster[cid] = (label, source)
    labeled = [
        LabeledCluster(clustering.get(cid), label, source)
        for cid, (label, source) in sorted(by_cluster.items())
    ]
    return labeled, missing
