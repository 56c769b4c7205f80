"""Tree learners, scoring and nested cross-validation."""

from .cv import CVResult, OuterFold, canonical_params, expand_grid, logo_grid_search, logo_splits, nested_logo_cv
from .metrics import f1_macro, r2
from .models import (
    Dataset,
    ModelFormatError,
    TrainedModel,
    TreeParams,
    apply_imputation,
    fit,
    fit_forest,
    fit_gbt,
    fit_tree,
    impute_medians,
    schema_hash,
)

FOREST_GRID = {
    "n_trees": [100, 300],
    "max_depth": [None, 10],
    "min_samples_leaf": [1, 3],
    "features_per_split": [1 / 3, "sqrt"],
}
GBT_GRID = {
    "n_trees": [100, 300],
    "learning_rate": [0.1, 0.3],
    "max_depth": [3, 6],
}


def resolve_grid(grid: dict, n_features: int) -> list[dict]:
    """Expand a grid, turning ``"sqrt"`` feature fractions into ``sqrt(p)/p``."""
    out = []
    for p in expand_grid(grid):
        if p.get("features_per_split") == "sqrt":
            p = {**p, "features_per_split": min(1.0, n_features ** 0.5 / n_features)}
        out.append(p)
    return out


__all__ = [
    "CVResult", "Dataset", "FOREST_GRID", "GBT_GRID", "ModelFormatError", "OuterFold",
    "TrainedModel", "TreeParams", "apply_imputation", "canonical_params", "expand_grid",
    "f1_macro", "fit", "fit_forest", "fit_gbt", "fit_tree", "impute_medians", "logo_grid_search", "logo_splits",
    "nested_logo_cv", "r2", "resolve_grid", "schema_hash",
]
