from hadamard.domain.model.hyper import HyperParams
from hadamard.domain.model.mlb import ForwardTrace, MLBGraph, forward
from hadamard.domain.model.params import ModelParams, param_shapes

__all__ = ["ForwardTrace", "HyperParams", "MLBGraph", "ModelParams", "forward", "param_shapes"]
