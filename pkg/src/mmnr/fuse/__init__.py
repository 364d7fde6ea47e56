from .align import (
    CenterFeatures,
    centers_from_grid,
    farthest_point_sample,
    idw_weights,
    interpolate_point_features,
    interpolate_points,
    project_to_plane,
)
from .uff import (
    FusionHead,
    TrainConfig,
    TrainReport,
    infonce_logits,
    infonce_loss,
    init_head,
    load_head,
    loss_and_grads,
    save_head,
    train_uff,
    uff_forward,
)
