"""Featurization and interpretable linear risk models.

Documents become L2-normalized sparse bag-of-n-grams vectors; a cluster is
the renormalized mean of its member vectors.  Models are penalized linear
classifiers (logistic or hinge loss, L1 or L2 penalty) trained by
deterministic full-batch gradient descent, so identical inputs always
reproduce identical weights.  Scores are sigmoid-calibrated margins in
[0, 1], and feature rankings come straight from the weight magnitudes.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.sparse import csr_matrix

from .clustering import Cluster
from .corpus import Corpus, Document, tokenize
from .errors import (
    DegenerateTrainingError,
    EmptyInputError,
    InputError,
    RuleCompilationError,
)

# A sparse vector is an index -> weight map with no explicit zeros.
SparseVector = dict[int, float]


def ngrams(tokens: Sequence[str], orders: Iterable[int]) -> list[str]:
    grams = []
    for order in sorted(orders):
        if order == 1:
            grams.extend(tokens)
        else:
            grams.extend(
                " ".join(tokens[i : i + order]) for i in range(len(tokens) - order + 1)
            )
    return grams


@dataclass(frozen=True)
class Vocabulary:
    index: Mapping[str, int]
    df: Mapping[str, int]
    orders: tuple[int, ...]
    n_docs: int
    max_size: Optional[int] = None

    def __len__(self) -> int:
        return len(self.index)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def tokens_by_index(self) -> list[str]:
        out = [""] * len(self.index)
        for token, idx in self.index.items():
            out[idx] = token
        return out


def build_vocabulary(
    docs: Sequence[Document],
    orders: Iterable[int] = (1,),
    min_df: int = 1,
    max_size: Optional[int] = None,
) -> Vocabulary:
    """Collect n-grams with document frequency >= min_df.

    When the result exceeds max_size, the highest-df grams are kept (ties
    broken lexicographically).  Indices follow sorted token order.
    """
    orders = tuple(sorted(set(orders)))
    if not orders or any(o not in (1, 2, 3) for o in orders):
        raise InputError("orders must be a non-empty subset of {1, 2, 3}")
    if min_df < 1:
        raise InputError("min_df must be >= 1")
    if not docs:
        raise EmptyInputError("no documents to build a vocabulary from")
    df: Counter[str] = Counter()
    for doc in docs:
        df.update(set(ngrams(tokenize(doc.text), orders)))
    kept = [t for t, c in df.items() if c >= min_df]
    if max_size is not None and len(kept) > max_size:
        kept.sort(key=lambda t: (-df[t], t))
        kept = kept[:max_size]
    kept.sort()
    return Vocabulary(
        index={t: i for i, t in enumerate(kept)},
        df={t: df[t] for t in kept},
        orders=orders,
        n_docs=len(docs),
        max_size=max_size,
    )


def _l2_normalize(vec: SparseVector) -> SparseVector:
    norm = math.sqrt(sum(w * w for w in vec.values()))
    if norm == 0.0:
        return {}
    return {i: w / norm for i, w in vec.items()}


def vectorize_document(doc: Document, vocab: Vocabulary, weighting: str = "tf") -> SparseVector:
    """Sparse bag-of-n-grams vector, L2-normalized when non-zero."""
    if weighting not in ("tf", "tfidf"):
        raise InputError(f"unknown weighting {weighting!r}")
    if len(vocab) == 0:
        raise EmptyInputError("empty vocabulary")
    counts: Counter[str] = Counter(
        g for g in ngrams(tokenize(doc.text), vocab.orders) if g in vocab
    )
    if not counts:
        return {}
    if weighting == "tf":
        vec = {vocab.index[t]: float(c) for t, c in counts.items()}
    else:
        n = vocab.n_docs
        vec = {
            vocab.index[t]: c * (math.log((1 + n) / (1 + vocab.df[t])) + 1.0)
            for t, c in counts.items()
        }
    return _l2_normalize(vec)


def vectorize_cluster(
    cluster: Cluster, corpus: Corpus, vocab: Vocabulary, weighting: str = "tf"
) -> SparseVector:
    """Renormalized mean of the member document vectors."""
    total: dict[int, float] = {}
    k = 0
    for doc_id in sorted(cluster.members):
        if doc_id not in corpus:
            raise InputError(f"cluster member {doc_id!r} not in corpus")
        k += 1
        for idx, w in vectorize_document(corpus.get(doc_id), vocab, weighting).items():
            total[idx] = total.get(idx, 0.0) + w
    if k == 0:
        return {}
    return _l2_normalize({i: w / k for i, w in total.items()})


@dataclass
class TrainConfig:
    loss: str = "logistic"  # logistic | hinge
    penalty: str = "l2"  # l2 | l1
    lam: float = 1e-4
    epochs: int = 300
    learning_rate: float = 0.5
    schedule: str = "halving"  # halving | constant
    seed: int = 0

    def validate(self) -> None:
        if self.loss not in ("logistic", "hinge"):
            raise InputError(f"unknown loss {self.loss!r}")
        if self.penalty not in ("l2", "l1"):
            raise InputError(f"unknown penalty {self.penalty!r}")
        if self.schedule not in ("halving", "constant"):
            raise InputError(f"unknown schedule {self.schedule!r}")
        if self.lam < 0 or self.epochs < 1 or self.learning_rate <= 0:
            raise InputError("bad training hyperparameters")


@dataclass
class RiskModel:
    weights: SparseVector
    intercept: float
    vocabulary: Optional[Vocabulary]
    loss: str
    penalty: str
    lam: float
    metadata: dict = field(default_factory=dict)

    def margin(self, vec: SparseVector) -> float:
        return sum(self.weights.get(i, 0.0) * w for i, w in vec.items()) + self.intercept

    def score(self, vec: SparseVector) -> float:
        """Risk score in [0, 1]: the sigmoid of the linear margin.

        Hinge-trained models use the same logistic link on the raw margin
        (identity-parameter calibration).
        """
        return _sigmoid(self.margin(vec))


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def _as_sign(label) -> float:
    if label in (1, 1.0, True, "positive", "+", "pos"):
        return 1.0
    if label in (-1, -1.0, 0, False, "negative", "-", "neg"):
        return -1.0
    raise InputError(f"unrecognized label {label!r}")


def _to_matrix(vectors: Sequence[SparseVector], dim: int) -> csr_matrix:
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for vec in vectors:
        for idx in sorted(vec):
            if idx >= dim:
                raise InputError(f"vector index {idx} outside dimension {dim}")
            indices.append(idx)
            data.append(vec[idx])
        indptr.append(len(indices))
    return csr_matrix(
        (np.asarray(data), np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
        shape=(len(vectors), dim),
    )


def logistic_objective(
    w: np.ndarray,
    b: float,
    x: csr_matrix,
    y: np.ndarray,
    penalty: str,
    lam: float,
) -> tuple[float, np.ndarray, float]:
    """Regularized mean logistic loss with its analytic gradient.

    Returns (objective, grad_w, grad_b).  The intercept is not penalized.
    """
    margins = x.dot(w) + b
    z = y * margins
    loss = float(np.mean(np.logaddexp(0.0, -z)))
    s = _stable_sigmoid(-z)  # d loss_i / d margin_i = -y_i * s_i
    coef = -y * s / len(y)
    grad_w = x.T.dot(coef)
    grad_b = float(np.sum(coef))
    if penalty == "l2":
        loss += lam * float(np.dot(w, w))
        grad_w = grad_w + 2.0 * lam * w
    else:
        loss += lam * float(np.sum(np.abs(w)))
        grad_w = grad_w + lam * np.sign(w)
    return loss, grad_w, grad_b


def _hinge_objective(
    w: np.ndarray,
    b: float,
    x: csr_matrix,
    y: np.ndarray,
    penalty: str,
    lam: float,
) -> tuple[float, np.ndarray, float]:
    margins = x.dot(w) + b
    z = y * margins
    hinge = np.maximum(0.0, 1.0 - z)
    loss = float(np.mean(hinge))
    active = (z < 1.0).astype(np.float64)
    coef = -y * active / len(y)
    grad_w = x.T.dot(coef)
    grad_b = float(np.sum(coef))
    if penalty == "l2":
        loss += lam * float(np.dot(w, w))
        grad_w = grad_w + 2.0 * lam * w
    else:
        loss += lam * float(np.sum(np.abs(w)))
        grad_w = grad_w + lam * np.sign(w)
    return loss, grad_w, grad_b


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def train(
    examples: Sequence[tuple[SparseVector, object]],
    vocabulary: Optional[Vocabulary] = None,
    config: Optional[TrainConfig] = None,
) -> RiskModel:
    """Full-batch gradient descent on the penalized objective.

    With the default halving-on-increase schedule a proposed step that
    raises the objective is rejected and retried at half the rate, so the
    accepted objective sequence is non-increasing.  Training is
    deterministic for identical inputs.
    """
    config = config or TrainConfig()
    config.validate()
    if not examples:
        raise EmptyInputError("no training examples")
    y = np.asarray([_as_sign(label) for _, label in examples])
    if len(set(y.tolist())) < 2:
        raise DegenerateTrainingError("training data has a single class")
    if vocabulary is not None:
        dim = len(vocabulary)
    else:
        dim = 1 + max((max(v) for v, _ in examples if v), default=-1)
    x = _to_matrix([v for v, _ in examples], dim)

    objective = logistic_objective if config.loss == "logistic" else _hinge_objective
    w = np.zeros(dim)
    b = 0.0
    lr = config.learning_rate
    obj, grad_w, grad_b = objective(w, b, x, y, config.penalty, config.lam)
    epochs_run = 0
    for _ in range(config.epochs):
        grad_max = abs(grad_b)
        if dim > 0:
            grad_max = max(grad_max, float(np.max(np.abs(grad_w))))
        if grad_max < 1e-12:
            break
        accepted = False
        while lr >= 1e-15:
            w_new = w - lr * grad_w
            b_new = b - lr * grad_b
            obj_new, gw_new, gb_new = objective(w_new, b_new, x, y, config.penalty, config.lam)
            if config.schedule == "constant" or obj_new <= obj:
                w, b, obj, grad_w, grad_b = w_new, b_new, obj_new, gw_new, gb_new
                accepted = True
                break
            lr *= 0.5
        epochs_run += 1
        if not accepted:
            break

    weights = {int(i): float(v) for i, v in enumerate(w) if v != 0.0}
    return RiskModel(
        weights=weights,
        intercept=float(b),
        vocabulary=vocabulary,
        loss=config.loss,
        penalty=config.penalty,
        lam=config.lam,
        metadata={
            "epochs": epochs_run,
            "final_objective": float(obj),
            "seed": config.seed,
            "learning_rate": config.learning_rate,
            "final_learning_rate": lr,
            "schedule": config.schedule,
            "examples": len(examples),
        },
    )


def score(model: RiskModel, vec: SparseVector) -> float:
    return model.score(vec)


def feature_importance(model: RiskModel, top_k: int) -> list[tuple[str, float]]:
    """Top-k tokens by absolute weight, descending; ties lexicographic."""
    if top_k < 0:
        raise InputError("top_k must be >= 0")
    if model.vocabulary is not None:
        names = model.vocabulary.tokens_by_index()
        entries = [(names[i], w) for i, w in model.weights.items() if w != 0.0]
    else:
        entries = [(str(i), w) for i, w in model.weights.items() if w != 0.0]
    entries.sort(key=lambda kv: (-abs(kv[1]), kv[0]))
    return entries[:top_k]


MODEL_FORMAT = "caserisk-model/1"


def save_model(model: RiskModel, path: str | Path) -> None:
    if model.vocabulary is None:
        vocab_blob = None
    else:
        vocab_blob = {
            "index": dict(sorted(model.vocabulary.index.items())),
            "df": dict(sorted(model.vocabulary.df.items())),
            "orders": list(model.vocabulary.orders),
            "n_docs": model.vocabulary.n_docs,
            "max_size": model.vocabulary.max_size,
        }
    blob = {
        "format": MODEL_FORMAT,
        "loss": model.loss,
        "penalty": model.penalty,
        "lambda": model.lam,
        "intercept": model.intercept,
        "weights": {str(i): w for i, w in sorted(model.weights.items())},
        "vocabulary": vocab_blob,
        "metadata": model.metadata,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path: str | Path) -> RiskModel:
    with open(path, "r", encoding="utf-8") as fh:
        blob = json.load(fh)
    if blob.get("format") != MODEL_FORMAT:
        raise InputError(f"unsupported model format {blob.get('format')!r}")
    vocab_blob = blob.get("vocabulary")
    vocabulary = None
    if vocab_blob is not None:
        vocabulary = Vocabulary(
            index={t: int(i) for t, i in vocab_blob["index"].items()},
            df={t: int(c) for t, c in vocab_blob["df"].items()},
            orders=tuple(vocab_blob["orders"]),
            n_docs=int(vocab_blob["n_docs"]),
            max_size=vocab_blob["max_size"],
        )
    return RiskModel(
        weights={int(i): float(w) for i, w in blob["weights"].items()},
        intercept=float(blob["intercept"]),
        vocabulary=vocabulary,
        loss=blob["loss"],
        penalty=blob["penalty"],
        lam=float(blob["lambda"]),
        metadata=blob.get("metadata", {}),
    )


# --- indicator rules ---------------------------------------------------

RULE_KINDS = (
    "lexicon",
    "pattern",
    "min_distinct_locations",
    "min_distinct_phones",
    "min_lexicon_hits",
)


@dataclass(frozen=True)
class IndicatorRule:
    """A named boolean clue over a document or a whole cluster."""

    name: str
    kind: str
    scope: str = "document"  # document | cluster
    terms: tuple[str, ...] = ()
    pattern: str = ""
    k: int = 1

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise RuleCompilationError(self.name, f"unknown kind {self.kind!r}")
        if self.scope not in ("document", "cluster"):
            raise RuleCompilationError(self.name, f"unknown scope {self.scope!r}")
        if self.kind in ("lexicon", "min_lexicon_hits") and not self.terms:
            raise RuleCompilationError(self.name, "lexicon rule needs terms")
        if self.kind == "pattern" and not self.pattern:
            raise RuleCompilationError(self.name, "pattern rule needs a pattern")
        if self.k < 1:
            raise RuleCompilationError(self.name, "threshold k must be >= 1")


def _lexicon_hits(text: str, terms: Sequence[str]) -> int:
    tokens = tokenize(text)
    counts = Counter(tokens)
    hits = 0
    for term in terms:
        parts = tokenize(term)
        if not parts:
            continue
        if len(parts) == 1:
            hits += counts.get(parts[0], 0)
        else:
            n = len(parts)
            hits += sum(
                1 for i in range(len(tokens) - n + 1) if tokens[i : i + n] == parts
            )
    return hits


def apply_indicators(
    cluster: Cluster,
    corpus: Corpus,
    rules: Sequence[IndicatorRule],
) -> dict[str, bool]:
    """Evaluate each rule over the cluster's member documents."""
    names = [r.name for r in rules]
    if len(set(names)) != len(names):
        raise InputError("duplicate rule names")
    docs = [corpus.get(d) for d in sorted(cluster.members)]
    out: dict[str, bool] = {}
    for rule in rules:
        if rule.kind == "pattern":
            try:
                compiled = re.compile(rule.pattern, re.IGNORECASE)
            except re.error as exc:
                raise RuleCompilationError(rule.name, f"bad pattern: {exc}") from exc
            out[rule.name] = any(compiled.search(d.text) for d in docs)
        elif rule.kind == "lexicon":
            out[rule.name] = any(_lexicon_hits(d.text, rule.terms) > 0 for d in docs)
        elif rule.kind == "min_distinct_locations":
            distinct = set()
            for d in docs:
                distinct.update(d.locations)
            out[rule.name] = len(distinct) >= rule.k
        elif rule.kind == "min_distinct_phones":
            distinct = set()
            for d in docs:
                distinct.update(d.phones)
            out[rule.name] = len(distinct) >= rule.k
        else:  # min_lexicon_hits
            hits = sum(_lexicon_hits(d.text, rule.terms) for d in docs)
            out[rule.name] = hits >= rule.k
    return out


def load_rules(path: str | Path) -> list[IndicatorRule]:
    """Read indicator rules from a JSON file.

    Each entry has name, kind, and optional scope / terms / lexicon_path /
    pattern / k; lexicon_path is resolved relative to the rules file.
    """
    base = Path(path).parent
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise InputError("rules file must contain a JSON list")
    rules = []
    for entry in raw:
        name = entry.get("name", "?")
        terms = tuple(entry.get("terms", ()))
        lexicon_path = entry.get("lexicon_path")
        if lexicon_path:
            with open(base / lexicon_path, "r", encoding="utf-8") as fh:
                terms = terms + tuple(
                    line.strip().lower() for line in fh if line.strip()
                )
        rules.append(
            IndicatorRule(
                name=name,
                kind=entry.get("kind", ""),
                scope=entry.get("scope", "document"),
                terms=terms,
                pattern=entry.get("pattern", ""),
                k=int(entry.get("k", 1)),
            )
        )
    return rules
