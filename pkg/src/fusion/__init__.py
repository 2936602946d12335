from src.fusion.adaptive_fusion import (
    FUSION_MODES,
    AdaptiveFusionParams,
    FusionLayer,
    adaptive_fuse,
    init_fusion_params,
    passthrough_params,
)

__all__ = [
    "FUSION_MODES",
    "AdaptiveFusionParams",
    "FusionLayer",
    "adaptive_fuse",
    "init_fusion_params",
    "passthrough_params",
]
