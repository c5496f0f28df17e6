from .config import FUSION_COMBINATIONS, SA_RATIOS, PfnConfig
from .model import Fractal, GraphStats, PfnModel, forward, graph_stats, init_parameters
from .modules import Conv, FusionBlock, ParamFactory, SAModule, ScaleFeature, bounded_relu
