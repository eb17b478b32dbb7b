from ._core import (
    Error,
    NGramLM,
    content_hash,
    default_lexicon,
    extract_backchannels,
    fit_ridge,
    format_transcript,
    info_nce_gradient,
    info_nce_loss,
    matching_select,
    normalize_whitespace,
    prosodic_features,
    r2_score,
    similarity_matrix,
    topk_percent_accuracy,
    triadic_select,
)

__all__ = [
    "Error",
    "NGramLM",
    "content_hash",
    "default_lexicon",
    "extract_backchannels",
    "fit_ridge",
    "format_transcript",
    "info_nce_gradient",
    "info_nce_loss",
    "matching_select",
    "normalize_whitespace",
    "prosodic_features",
    "r2_score",
    "similarity_matrix",
    "topk_percent_accuracy",
    "triadic_select",
]
