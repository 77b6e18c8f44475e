"""corpusforge: corpus curation and curriculum-data toolkit.

Cleans, filters, deduplicates, and tokenizes a low-resource-language corpus,
then assembles warm-up, pre-training, and fine-tuning datasets with exact,
auditable bookkeeping.  Core algorithms follow the scikit-learn estimator
conventions (fit/transform/predict, get_params) so they compose with the
wider ecosystem; the `forge` CLI drives the same code end to end.
"""

from .bpe import (
    BpeModel,
    BpeTokenizer,
    ExtendedVocab,
    extend_vocab,
    fertility,
    train_bpe,
)
from .corpus import (
    ChatTemplate,
    MixSource,
    MixSpec,
    ParallelDoc,
    SftSample,
    TokenChunk,
    build_sft_mix,
    chunk_stream,
    format_sft,
    format_warmup,
    mix_datasets,
    parse_warmup,
)
from .dedup import (
    DedupParams,
    DuplicateClusters,
    MinHashDeduplicator,
    MinHashSignature,
    cluster_duplicates,
    estimate_jaccard,
    lsh_band_keys,
    minhash_signature,
    shingle,
)
from .documents import Document, StageDecision
from .errors import (
    ConfigurationError,
    DataError,
    ForgeError,
    TrainingDataError,
    UnclassifiableTextError,
    UnsignableDocumentError,
    UntrainableSampleError,
    VocabUnreachableError,
)
from .langid import CharNgramLanguageIdentifier, LangDecision, classify, filter_language, train_langid
from .metrics import (
    AlignmentReport,
    LoraSpec,
    ModelDims,
    alignment_matrix,
    lora_param_count,
    mean_token_probability,
    perplexity_from_mean_nll,
    resize_param_count,
)
from .normalize import (
    NormalizationProfile,
    TextNormalizer,
    WikiSectionPolicy,
    normalize_text,
    strip_wiki_sections,
)
from .pipeline import PipelineConfig, RunManifest, load_config, run_pipeline, stats_report
from .quality import (
    Lexicons,
    QualityFilter,
    QualityStats,
    QualityThresholds,
    RepetitionParams,
    apply_quality_rules,
    compute_quality_stats,
    profanity_gate,
    remove_repetition,
)

__version__ = "0.1.0"
