from .geometry import (
    CameraIntrinsics,
    RigidPose,
    axis_angle_to_matrix_np,
    disparity_to_depth,
    project,
    rotation_matrix,
    warp,
)
from .losses import (
    DepthLossConfig,
    LossBreakdown,
    ReprojectionResult,
    min_reprojection_automask,
    photometric_loss,
    smoothness_loss,
    ssim,
    total_loss,
)
from .pose import PoseHead, pose_head
