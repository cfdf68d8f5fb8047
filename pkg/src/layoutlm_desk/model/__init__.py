from .checkpoint import (
    FORMAT_VERSION,
    Checkpoint,
    checkpoints_equal,
    from_bytes,
    load_checkpoint,
    save_checkpoint,
    to_bytes,
)
from .network import (
    cls_vectors,
    docclass_logits,
    embed,
    encode,
    forward,
    fuse_image,
    mdc_logits,
    mvlm_logits,
    seqlabel_logits,
)
from .params import (
    ModelParams,
    adapt_params,
    init_from_text_checkpoint,
    init_params,
    is_shared,
    param_shapes,
    trainable_names,
)
from .types import (
    CLS_BOX,
    EMPTY_BOX,
    BBox,
    Batch,
    ModelConfig,
    TokenSequence,
    bieso_tagset,
    collate,
)
