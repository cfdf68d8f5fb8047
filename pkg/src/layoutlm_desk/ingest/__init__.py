from .datasets import (
    DEFAULT_CLASSES,
    FORMATS,
    SROIE_SLOTS,
    dataset_summary,
    doc_to_record,
    dump_dataset,
    load_labeled_dataset,
)
from .document import EntitySpan, RawDocument, RawWord, clip_box, normalize_bbox
from .features import (
    PAGE,
    FeatureProvider,
    FileFeatureProvider,
    PseudoFeatureProvider,
    features_for_sequence,
    file_features,
    provider_entries,
    pseudo_features,
    write_features,
)
from .hocr import parse_hocr, write_hocr
