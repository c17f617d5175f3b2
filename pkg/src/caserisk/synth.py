"""Deterministic synthetic corpora with known structure.

Every generated cluster shares a synthetic phone (so phone blocking can
recover the planted partition exactly), carries a class label, and gets a
source domain drawn with a configurable skew between classes.  Class
signal tokens and a per-domain proxy token are injected into the text so
both genuine signal and spurious domain signal exist for models to find.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from random import Random
from typing import Mapping, Sequence

from .bias import ContingencyTable, NEGATIVE, POSITIVE
from .clustering import Clustering, write_clustering
from .corpus import Corpus, Document, write_corpus
from .errors import InputError

DEFAULT_SIGNAL_TOKENS: Mapping[str, tuple[float, float]] = {
    "sigpos": (0.8, 0.05),  # (P(inject | positive), P(inject | negative))
    "signeg": (0.05, 0.8),
}
DEFAULT_DOMAINS = ("sitealpha", "sitebeta")
DEFAULT_LOCATIONS = ("springfield", "rivertown", "lakeside", "hillcrest")


@dataclass
class SynthConfig:
    num_clusters: int = 200
    positive_fraction: float = 0.3
    size_rho: float = 0.125  # geometric parameter; mean size = 1/rho
    size_cap: int = 64
    vocab_size: int = 2000
    doc_tokens: int = 30
    signal_tokens: Mapping[str, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_SIGNAL_TOKENS)
    )
    domains: Sequence[str] = DEFAULT_DOMAINS
    domain_skew: float = 0.0  # beta: positives land on domains[0] w.p. beta, else uniform
    locations: Sequence[str] = DEFAULT_LOCATIONS
    location_skew: float = 0.0
    inject_domain_token: bool = True
    duplication_rate: float = 0.0
    cluster_level_signal: bool = False
    seed: int = 0

    def validate(self) -> None:
        if self.num_clusters < 2:
            raise InputError("num_clusters must be >= 2")
        if not 0.0 < self.positive_fraction < 1.0:
            raise InputError("positive_fraction must be in (0, 1)")
        if not 0.0 < self.size_rho <= 1.0:
            raise InputError("size_rho must be in (0, 1]")
        if self.size_cap < 1:
            raise InputError("size_cap must be >= 1")
        if self.vocab_size < 1 or self.doc_tokens < 1:
            raise InputError("vocab_size and doc_tokens must be >= 1")
        for knob in ("domain_skew", "location_skew", "duplication_rate"):
            value = getattr(self, knob)
            if not 0.0 <= value <= 1.0:
                raise InputError(f"{knob} must be in [0, 1]")
        for token, (p_pos, p_neg) in self.signal_tokens.items():
            if not (0.0 <= p_pos <= 1.0 and 0.0 <= p_neg <= 1.0):
                raise InputError(f"signal token {token!r} probabilities must be in [0, 1]")
        if len(self.domains) < 1 or len(self.locations) < 1:
            raise InputError("domains and locations must be non-empty")


@dataclass
class SynthResult:
    corpus: Corpus
    clustering: Clustering
    labels: dict[str, str]  # cluster id -> positive | negative
    config: SynthConfig

    def positive_ids(self) -> list[str]:
        return sorted(cid for cid, label in self.labels.items() if label == POSITIVE)


def _geometric(rng: Random, rho: float, cap: int) -> int:
    u = rng.random()
    size = 1 + int(math.log(1.0 - u) / math.log(1.0 - rho)) if rho < 1.0 else 1
    return min(cap, max(1, size))


def _skewed_choice(rng: Random, options: Sequence[str], skew: float, biased: bool) -> str:
    if biased and rng.random() < skew:
        return options[0]
    return options[rng.randrange(len(options))]


def generate(config: SynthConfig) -> SynthResult:
    """Generate (corpus, planted clustering, cluster labels) from config.

    Deterministic: identical configs yield byte-identical corpora.
    """
    config.validate()
    rng = Random(config.seed)
    n_pos = min(config.num_clusters - 1, max(1, round(config.num_clusters * config.positive_fraction)))
    classes = [POSITIVE] * n_pos + [NEGATIVE] * (config.num_clusters - n_pos)
    rng.shuffle(classes)

    background = [f"w{i:05d}" for i in range(config.vocab_size)]
    base_date = date(2024, 1, 1)
    documents = []
    member_sets = []
    labels: dict[str, str] = {}
    signal_items = sorted(config.signal_tokens.items())

    for ci, label in enumerate(classes):
        positive = label == POSITIVE
        size = _geometric(rng, config.size_rho, config.size_cap)
        phone = f"555{ci:07d}"
        domain = _skewed_choice(rng, list(config.domains), config.domain_skew, positive)
        cluster_signals = None
        if config.cluster_level_signal:
            cluster_signals = [
                token
                for token, (p_pos, p_neg) in signal_items
                if rng.random() < (p_pos if positive else p_neg)
            ]
        member_ids = []
        texts: list[str] = []
        for mi in range(size):
            doc_id = f"c{ci:05d}-d{mi:03d}"
            location = _skewed_choice(
                rng, list(config.locations), config.location_skew, positive
            )
            posted = base_date + timedelta(days=rng.randrange(90))
            if texts and rng.random() < config.duplication_rate:
                text = texts[rng.randrange(len(texts))]
            else:
                words = [background[rng.randrange(config.vocab_size)] for _ in range(config.doc_tokens)]
                if cluster_signals is not None:
                    words.extend(cluster_signals)
                else:
                    words.extend(
                        token
                        for token, (p_pos, p_neg) in signal_items
                        if rng.random() < (p_pos if positive else p_neg)
                    )
                if config.inject_domain_token:
                    words.append(domain)
                words.append(location)
                text = " ".join(words)
            texts.append(text)
            documents.append(
                Document(
                    id=doc_id,
                    source_domain=domain,
                    text=text,
                    phones=(phone,),
                    locations=(location,),
                    posted_date=posted,
                )
            )
            member_ids.append(doc_id)
        member_sets.append(member_ids)
        labels[min(member_ids)] = label

    clustering = Clustering.from_member_sets(member_sets)
    return SynthResult(Corpus(documents), clustering, labels, config)


def table2_fixture() -> ContingencyTable:
    """The 2x2 domain-group x label-class document counts used throughout
    the bias tests."""
    return ContingencyTable(
        row_labels=("backpage.com", "other"),
        col_labels=(POSITIVE, NEGATIVE),
        counts=((165686, 125467), (155271, 154627)),
    )


def write_artifacts(result: SynthResult, out_dir: str | Path) -> dict[str, Path]:
    """Write the corpus plus ground-truth and helper files.

    Returns a name -> path map: corpus, clusters, labels (all clusters),
    expert labels (positives only), domain lexicon, gazetteer.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "corpus": out / "corpus.jsonl",
        "clusters": out / "clusters_true.csv",
        "labels": out / "labels_true.csv",
        "expert_labels": out / "labels_expert.csv",
        "domain_lexicon": out / "domains.txt",
        "gazetteer": out / "gazetteer.txt",
    }
    write_corpus(result.corpus, paths["corpus"])
    write_clustering(result.clustering, paths["clusters"])
    with open(paths["labels"], "w", encoding="utf-8", newline="") as fh:
        fh.write("cluster_id,label,source\n")
        for cid in sorted(result.labels):
            fh.write(f"{cid},{result.labels[cid]},expert\n")
    with open(paths["expert_labels"], "w", encoding="utf-8", newline="") as fh:
        fh.write("cluster_id,label,source\n")
        for cid in result.positive_ids():
            fh.write(f"{cid},positive,expert\n")
    with open(paths["domain_lexicon"], "w", encoding="utf-8") as fh:
        for domain in sorted(set(result.config.domains)):
            fh.write(domain + "\n")
    with open(paths["gazetteer"], "w", encoding="utf-8") as fh:
        for location in sorted(set(result.config.locations)):
            fh.write(location + "\n")
    return paths
