from .bieso import Entity, decode_bieso, split_tag, tags_from_entities
from .metrics import (
    entity_counts_by_label,
    entity_f1,
    format_metrics,
    prf,
    read_metrics,
    slot_counts,
    slot_exact_match_f1,
    write_metrics,
)
from .training import (
    DOCCLASS_DEFAULTS,
    SEQLABEL_DEFAULTS,
    FinetuneHP,
    FinetuneResult,
    LabeledDoc,
    evaluate,
    finetune_docclass,
    finetune_seqlabel,
    first_piece_mask,
    predict_classes,
    predict_word_tags,
    prepare_docs,
    slots_from_entities,
)
