from .tensor import (
    ConfigurationError,
    ShapeError,
    Tensor,
    UsageError,
    absolute,
    add,
    all_finite,
    as_tensor,
    clamp,
    concat,
    cos,
    default_dtype,
    div,
    exp,
    exp_neg,
    get_default_dtype,
    getitem,
    is_grad_enabled,
    log,
    log_softmax,
    matmul,
    mean,
    mean_all,
    mean_spatial,
    min_over_list,
    mul,
    neg,
    no_grad,
    power,
    relu,
    reshape,
    set_default_dtype,
    sigmoid,
    sin,
    sqrt,
    stack,
    sub,
    sum_,
    transpose,
)
from .nn import (
    avg_pool2,
    bilinear_resample,
    box_filter,
    channel_weighted_sum,
    concat_channels,
    conv2d,
    downsample,
    grid_sample,
    resample_to,
    same_padding,
)
from .optim import Parameter, adam_step, clip_global_grad_norm, global_grad_norm, zero_grad
from .gradcheck import GradCheckResult, check_gradients, numerical_grad, relative_error
