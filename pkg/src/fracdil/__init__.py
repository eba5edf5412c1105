"""Fractional dilated convolutions, learned global scales, and their rewrite
into integral-dilation sub-convolutions."""
from .decompose import BranchSpec, DecompositionResult, count_flops, decompose_graph, decompose_scale
from .density import DensityMap, density_bruteforce, fractional_density, layer_density
from .fracconv import (ConvParams, ScalePair, bilinear_sample, frac_conv2d, frac_conv2d_backward,
                       integer_dilated_conv2d)
from .graph import LayerSpec, ModelGraph, plain_baseline, toy_graph
from .gsl import GSLBlock, collect_scale_stats, freeze_scales, gsl_backward, gsl_forward
from .kernels import backend_name, set_backend
from .transfer import WeightMap, transfer_weights, verify_transfer

__version__ = "0.1.0"

__all__ = [
    "BranchSpec", "ConvParams", "DecompositionResult", "DensityMap", "GSLBlock", "LayerSpec",
    "ModelGraph", "ScalePair", "WeightMap", "backend_name", "bilinear_sample", "collect_scale_stats",
    "count_flops", "decompose_graph", "decompose_scale", "density_bruteforce", "fractional_density",
    "freeze_scales", "frac_conv2d", "frac_conv2d_backward", "gsl_backward", "gsl_forward",
    "integer_dilated_conv2d", "layer_density", "plain_baseline", "set_backend", "toy_graph",
    "transfer_weights", "verify_transfer",
]
