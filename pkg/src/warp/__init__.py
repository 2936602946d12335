from src.warp.warper import (
    SKY_DEPTH,
    FeatureWarper,
    WarpGrid,
    bilinear_sample,
    compute_warp_grid,
    downscale_grid,
    warp_features,
)

__all__ = [
    "SKY_DEPTH",
    "FeatureWarper",
    "WarpGrid",
    "bilinear_sample",
    "compute_warp_grid",
    "downscale_grid",
    "warp_features",
]
