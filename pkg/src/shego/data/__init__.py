from .dialogues import (
    DEFAULT_HISTORY_BUDGET,
    SYSTEM,
    USER,
    DialogueExample,
    examples_from_dialogues,
    history_tokens,
    load_dialogues,
    truncate_history,
)
from .schema import (
    DataFormatError,
    DuplicateDefinitionError,
    Schema,
    Service,
    SlotDef,
    UnknownReferenceError,
    load_schema,
    service_domain,
)
from .synthetic import (
    CorpusSpec,
    CorpusSpecError,
    SyntheticCorpus,
    default_corpus_spec,
    generate_synthetic_corpus,
    generate_synthetic_dialogues,
    load_corpus_spec,
    write_sgd_corpus,
)
from .vocab import (
    NONE_VALUE,
    Vocabulary,
    detokenize,
    normalize_text,
    segment,
    sentinel,
    tokenize,
)
