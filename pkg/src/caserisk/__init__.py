"""Bias-aware cluster-level risk scoring for document corpora."""

from .bias import (
    BiasReport,
    ContingencyTable,
    FeatureSpec,
    TestResult,
    audit,
    bonferroni,
    chi_squared_test,
    contingency,
    ks_two_sample,
    renyi_divergence,
)
from .clustering import (
    Cluster,
    Clustering,
    GraphConfig,
    SimilarityGraph,
    adjusted_rand,
    build_graph,
    consensus,
    disagreement_cost,
    kwikcluster,
    refine,
    text_similarity,
)
from .corpus import (
    Corpus,
    Document,
    Gazetteer,
    extract_attributes,
    ingest,
    normalize_phone,
    remove_tokens,
    write_corpus,
)
from .evaluate import EvalReport, FoldPlan, cross_validate, make_folds, roc_auc, split
from .model import (
    IndicatorRule,
    RiskModel,
    TrainConfig,
    Vocabulary,
    apply_indicators,
    build_vocabulary,
    feature_importance,
    load_model,
    save_model,
    score,
    train,
    vectorize_cluster,
    vectorize_document,
)
from .sampling import (
    LabeledCluster,
    SamplingPlan,
    conditioned_negatives,
    random_negatives,
    verify_alignment,
)
from .synth import SynthConfig, SynthResult, generate, table2_fixture

__version__ = "0.1.0"
