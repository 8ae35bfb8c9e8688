"""topicpipe: staged-regularizer topic model training with evolutionary strategy search.

The library covers the full loop: corpus preparation (tokenization, vocabulary,
co-occurrence/PPMI statistics), regularized EM training, a variable-length
training-pipeline genome with GA/BO optimizers, surrogate-assisted fitness,
automatic and LLM-backed quality metrics, and a broker/worker mode for
distributing evaluations.
"""

from .artm import (
    RegKind,
    RegularizerSpec,
    TopicModel,
    TopicTarget,
    e_step,
    init_model,
    load_model,
    log_likelihood,
    m_step,
    save_model,
    top_tokens,
    train_stage,
)
from .corpus import (
    Corpus,
    CoocStats,
    Dataset,
    Document,
    PreprocessConfig,
    Vocabulary,
    batch_corpus,
    build_dataset,
    build_vocabulary,
    compute_cooccurrence,
    compute_ppmi,
    load_corpus_dir,
    preprocess_text,
    save_corpus_dir,
    vectorize,
)
from .evolution import (
    BOConfig,
    GAConfig,
    Individual,
    MutationProbs,
    run_bo,
    run_ga,
    run_random_search,
)
from .metrics import (
    correlation_report,
    default_fitness,
    get_metric,
    npmi_pair,
    register_metric,
    topic_coherence,
)
from .pipeline import (
    FixedGenome,
    GraphPipeline,
    Stage,
    execute,
    fixed_to_pipeline,
    pipeline_from_json,
    pipeline_to_json,
    random_pipeline,
    to_surrogate_vector,
    validate,
)
from .surrogate import SurrogateConfig, SurrogateDataset

__version__ = "0.1.0"
