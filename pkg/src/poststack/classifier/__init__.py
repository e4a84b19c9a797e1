"""Email body classification: feature extraction + random forest."""

from .features import (  # noqa: F401
    FEATURE_NAMES,
    FEATURE_SCHEMA_VERSION,
    N_FEATURES,
    extract_features,
    fnv1a32,
    tokenize,
)
from .forest import (  # noqa: F401
    CLASSES,
    ClassDistribution,
    ForestModel,
    ForestParams,
    load_model,
    predict,
    save_model,
    train_forest,
)
