"""
Networks
UNet-like generator with Bayesian dropout layers and the 5-layer patch discriminator
"""

import logging
from collections import OrderedDict
from enum import Enum
from typing import Dict, List, Mapping, Optional, Union

import numpy as np

from src.bcgan.autodiff import (Node, OpNode, Tensor, add, batchnorm2d, concat_channels, constant, conv2d,
                                conv_transpose2d, evaluate, leaky_relu, reduce_sum, relu, scalar_mul, square,
                                tanh)
from src.bcgan.config import DiscriminatorSpec, GeneratorSpec
from src.bcgan.errors import CheckpointError, ConfigError, ShapeError
from src.bcgan.kernels import RunningStats
from src.bcgan.layers import (BernoulliDropoutParams, ConcreteDropout, ConcreteDropoutParams, DropoutMode,
                              MonteCarloDropout)
from src.bcgan.rng import derive_stream

logger = logging.getLogger(__name__)

INIT_STD = 0.02
KERNEL_SIZE = 4
DISCRIMINATOR_STRIDES = (2, 2, 2, 1, 1)

DropoutLayer = Union[ConcreteDropout, MonteCarloDropout]


class Mode(str, Enum):
    TRAIN = "train"
    EVAL_STOCHASTIC = "eval-stochastic"
    EVAL_DETERMINISTIC = "eval-deterministic"

    @property
    def batchnorm_training(self) -> bool:
        return self is Mode.TRAIN

    @property
    def dropout(self) -> DropoutMode:
        if self is Mode.EVAL_DETERMINISTIC:
            return DropoutMode.DETERMINISTIC
        return DropoutMode.STOCHASTIC


class BatchNorm:
    """Affine batch normalization with running statistics"""

    def __init__(self, gamma: Tensor, beta: Tensor, stats: RunningStats):
        self.gamma = gamma
        self.beta = beta
        self.stats = stats

    def __call__(self, x: Node, training: bool, track_stats: bool = True) -> OpNode:
        stats = self.stats if track_stats or not training else None
        return batchnorm2d(x, self.gamma, self.beta, training=training, stats=stats)


class ConvBlock:
    """Convolution (or transposed convolution), optional batchnorm, optional activation"""

    def __init__(self, name: str, weight: Tensor, bias: Optional[Tensor], norm: Optional[BatchNorm],
                 activation: Optional[str], stride: int, padding: int, transpose: bool = False):
        self.name = name
        self.weight = weight
        self.bias = bias
        self.norm = norm
        self.activation = activation
        self.stride = stride
        self.padding = padding
        self.transpose = transpose

    @property
    def out_channels(self) -> int:
        return self.weight.shape[1] if self.transpose else self.weight.shape[0]

    def __call__(self, x: Node, training: bool, track_stats: bool = True) -> Node:
        conv = conv_transpose2d if self.transpose else conv2d
        out: Node = conv(x, self.weight, self.bias, stride=self.stride, padding=self.padding)
        if self.norm is not None:
            out = self.norm(out, training, track_stats)
        if self.activation == "leaky_relu":
            out = leaky_relu(out)
        elif self.activation == "relu":
            out = relu(out)
        return out


class NetworkInstance:
    """Named parameters, running statistics and layer handles of one built network"""

    def __init__(self, kind: str, spec: Union[GeneratorSpec, DiscriminatorSpec], dtype=np.float32):
        self.kind = kind
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.mode = Mode.TRAIN
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.running_stats: "OrderedDict[str, RunningStats]" = OrderedDict()
        self.encoder: List[ConvBlock] = []
        self.decoder: List[ConvBlock] = []
        self.head: Optional[ConvBlock] = None
        self.layers: List[ConvBlock] = []
        # decoder position -> dropout layer
        self.dropout_layers: "OrderedDict[int, DropoutLayer]" = OrderedDict()

    def add_param(self, name: str, tensor: Tensor) -> Tensor:
        if name in self.params:
            raise ConfigError(f"duplicate parameter name '{name}'")
        tensor.name = name
        tensor.requires_grad = True
        self.params[name] = tensor
        return tensor

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def set_mode(self, mode: Union[Mode, str]) -> None:
        self.mode = Mode(mode)

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.grad = None

    def dropout_probabilities(self) -> Dict[int, float]:
        return {position: layer.p for position, layer in self.dropout_layers.items()}

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        """Parameters plus batchnorm running statistics, ready for save_checkpoint"""
        state: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, param in self.params.items():
            state[name] = param.data.copy()
        for name, stats in self.running_stats.items():
            state[f"{name}.running_mean"] = stats.mean.copy()
            state[f"{name}.running_var"] = stats.var.copy()
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        """
        Restore parameters and running statistics in place

        Raises:
            CheckpointError: On missing, unexpected or mis-shaped entries
        """
        expected = self.state_dict()
        missing = [name for name in expected if name not in state]
        unexpected = [name for name in state if name not in expected]
        if missing or unexpected:
            raise CheckpointError(f"{self.kind} checkpoint mismatch: missing {missing}, unexpected {unexpected}")
        for name, reference in expected.items():
            if tuple(state[name].shape) != reference.shape:
                raise CheckpointError(f"{name}: checkpoint shape {tuple(state[name].shape)} != {reference.shape}")
        for name, param in self.params.items():
            param.data = np.ascontiguousarray(state[name], dtype=self.dtype)
        for name, stats in self.running_stats.items():
            stats.mean = np.asarray(state[f"{name}.running_mean"], dtype=self.dtype).copy()
            stats.var = np.asarray(state[f"{name}.running_var"], dtype=self.dtype).copy()

    def predict(self, x: np.ndarray, mode: Optional[Union[Mode, str]] = None, seed: int = 0,
                pass_index: int = 0) -> np.ndarray:
        """Evaluate the generator on a (B, 1, S, S) array"""
        node = generator_forward(self, Tensor(x, dtype=self.dtype), mode, seed=seed, pass_index=pass_index)
        return evaluate(node).data


class _Initializer:
    def __init__(self, seed: int, purpose: str, dtype):
        self.rng = derive_stream(seed, purpose)
        self.dtype = dtype

    def normal(self, shape, mean: float = 0.0) -> Tensor:
        return Tensor(self.rng.normal(mean, INIT_STD, size=shape), dtype=self.dtype)

    def zeros(self, shape) -> Tensor:
        return Tensor(np.zeros(shape), dtype=self.dtype)


def _batchnorm(net: NetworkInstance, init: _Initializer, name: str, channels: int) -> BatchNorm:
    gamma = net.add_param(f"{name}.gamma", init.normal((channels,), mean=1.0))
    beta = net.add_param(f"{name}.beta", init.zeros((channels,)))
    stats = RunningStats(channels, dtype=net.dtype)
    net.running_stats[name] = stats
    return BatchNorm(gamma, beta, stats)


def encoder_channels(spec: GeneratorSpec) -> List[int]:
    return [spec.base_channels * 2 ** min(i, 3) for i in range(spec.levels)]


def decoder_channels(spec: GeneratorSpec) -> List[int]:
    """Output channels of decoder blocks 1 (deepest) .. levels"""
    enc = encoder_channels(spec)
    levels = spec.levels
    return [enc[levels - j - 1] if j < levels else spec.base_channels for j in range(1, levels + 1)]


def build_generator(spec: GeneratorSpec, seed: int, temperature: float = 0.1, c_w: float = 1e-6,
                    c_d: float = 1e-5, dtype=np.float32) -> NetworkInstance:
    """
    Build the encoder-decoder generator

    Encoder level i: conv k4 s2 p1 -> batchnorm (not on level 1) -> leaky_relu.
    Decoder block j (j = 1 is deepest): conv_transpose k4 s2 p1 -> batchnorm -> relu,
    its input concatenated with encoder level (levels - j + 1) for j > 1. Dropout
    follows the decoder blocks named in dropout_positions. A 1x1 conv head and
    tanh remapped to [0, 1] produce the image.

    Args:
        spec: Generator layout
        seed: Weight-init seed
        temperature: Concrete relaxation temperature
        c_w: Weight regularizer coefficient
        c_d: Dropout regularizer coefficient
        dtype: Parameter dtype (float64 for gradient checks)

    Returns:
        NetworkInstance in TRAIN mode
    """
    net = NetworkInstance("generator", spec, dtype)
    init = _Initializer(seed, "init-generator", net.dtype)
    enc = encoder_channels(spec)
    dec = decoder_channels(spec)

    in_channels = 1
    for i, out_channels in enumerate(enc, start=1):
        name = f"enc.{i}"
        first = i == 1
        weight = net.add_param(f"{name}.conv.weight",
                               init.normal((out_channels, in_channels, KERNEL_SIZE, KERNEL_SIZE)))
        bias = net.add_param(f"{name}.conv.bias", init.zeros((out_channels,))) if first else None
        norm = None if first else _batchnorm(net, init, f"{name}.bn", out_channels)
        net.encoder.append(ConvBlock(name, weight, bias, norm, "leaky_relu", stride=2, padding=1))
        in_channels = out_channels

    in_channels = enc[-1]
    for j, out_channels in enumerate(dec, start=1):
        name = f"dec.{j}"
        if j > 1:
            in_channels = dec[j - 2] + enc[spec.levels - j]
        weight = net.add_param(f"{name}.convt.weight",
                               init.normal((in_channels, out_channels, KERNEL_SIZE, KERNEL_SIZE)))
        norm = _batchnorm(net, init, f"{name}.bn", out_channels)
        net.decoder.append(ConvBlock(name, weight, None, norm, "relu", stride=2, padding=1, transpose=True))
        layer = _dropout_layer(net, spec, j, out_channels, temperature, c_w, c_d) if j in spec.dropout_positions else None
        if layer is not None:
            net.dropout_layers[j] = layer

    head_weight = net.add_param("head.conv.weight", init.normal((1, dec[-1], 1, 1)))
    head_bias = net.add_param("head.conv.bias", init.zeros((1,)))
    net.head = ConvBlock("head", head_weight, head_bias, None, None, stride=1, padding=0)

    logger.debug("built generator: %d params tensors, dropout %s at %s", len(net.params), spec.dropout_kind,
                 sorted(net.dropout_layers))
    return net


def _dropout_layer(net: NetworkInstance, spec: GeneratorSpec, position: int, channels: int,
                   temperature: float, c_w: float, c_d: float) -> Optional[DropoutLayer]:
    if spec.dropout_kind == "concrete":
        params = ConcreteDropoutParams.initial(spec.initial_p, temperature, c_w, c_d, channels)
        params.logit_p.data = params.logit_p.data.astype(net.dtype)
        layer = ConcreteDropout(position, params, spec.per_element)
        net.add_param(layer.param_name, params.logit_p)
        return layer
    if spec.dropout_kind == "monte_carlo":
        return MonteCarloDropout(position, BernoulliDropoutParams(spec.mc_rate), spec.per_element)
    return None


def build_discriminator(spec: DiscriminatorSpec, seed: int, dtype=np.float32) -> NetworkInstance:
    """
    Build the 5-layer patch discriminator

    Channels base, 2b, 4b, 8b, 1 with strides 2, 2, 2, 1, 1 (k4 p1); batchnorm on
    layers 2-4; leaky_relu after layers 1-4. A 32x32 pair gives a 2x2 logit map.
    """
    net = NetworkInstance("discriminator", spec, dtype)
    init = _Initializer(seed, "init-discriminator", net.dtype)
    base = spec.base_channels
    channels = [base, 2 * base, 4 * base, 8 * base, 1]

    in_channels = spec.input_channels
    for index, (out_channels, stride) in enumerate(zip(channels, DISCRIMINATOR_STRIDES), start=1):
        name = f"disc.{index}"
        last = index == spec.conv_layers
        normed = 2 <= index <= 4
        weight = net.add_param(f"{name}.conv.weight",
                               init.normal((out_channels, in_channels, KERNEL_SIZE, KERNEL_SIZE)))
        bias = None if normed else net.add_param(f"{name}.conv.bias", init.zeros((out_channels,)))
        norm = _batchnorm(net, init, f"{name}.bn", out_channels) if normed else None
        activation = None if last else "leaky_relu"
        net.layers.append(ConvBlock(name, weight, bias, norm, activation, stride=stride, padding=1))
        in_channels = out_channels
    return net


def _as_node(x: Union[Node, np.ndarray], net: NetworkInstance) -> Node:
    if isinstance(x, (Tensor, OpNode)):
        return x
    return Tensor(x, dtype=net.dtype)


def generator_forward(net: NetworkInstance, x: Union[Node, np.ndarray], mode: Optional[Union[Mode, str]] = None,
                      seed: int = 0, pass_index: int = 0) -> Node:
    """
    Build the generator graph for a source batch

    Args:
        net: Generator built by build_generator
        x: Source images (B, 1, S, S) with S = spec.input_size
        mode: Overrides net.mode when given
        seed: Run seed for the dropout streams
        pass_index: Stochastic pass (or training step) index; each dropout layer
            draws from derive_stream(seed, "dropout", pass_index, position)

    Returns:
        Prediction node in [0, 1]

    Raises:
        ShapeError: If x does not match the generator input
    """
    if net.kind != "generator":
        raise ShapeError(f"generator_forward called on a {net.kind}")
    mode = Mode(mode) if mode is not None else net.mode
    x = _as_node(x, net)
    size = net.spec.input_size
    if len(x.shape) != 4 or x.shape[1:] != (1, size, size):
        raise ShapeError(f"generator expects (B, 1, {size}, {size}), got {x.shape}")
    training = mode.batchnorm_training

    skips: List[Node] = []
    out: Node = x
    for block in net.encoder:
        out = block(out, training)
        skips.append(out)

    levels = net.spec.levels
    for j, block in enumerate(net.decoder, start=1):
        if j > 1:
            out = concat_channels(out, skips[levels - j])
        out = block(out, training)
        layer = net.dropout_layers.get(j)
        if layer is not None:
            stream = None
            if mode.dropout is DropoutMode.STOCHASTIC:
                stream = derive_stream(seed, "dropout", pass_index, j)
            out = layer(out, stream, mode.dropout)

    out = net.head(out, training)
    return scalar_mul(add(tanh(out), 1.0), 0.5)


def discriminator_forward(net: NetworkInstance, source: Union[Node, np.ndarray], target: Union[Node, np.ndarray],
                          mode: Optional[Union[Mode, str]] = None, track_stats: bool = True) -> Node:
    """
    Patch logits for a (source, target) pair; batchnorm uses batch statistics in TRAIN mode

    With track_stats=False a TRAIN pass leaves the running statistics untouched.
    """
    if net.kind != "discriminator":
        raise ShapeError(f"discriminator_forward called on a {net.kind}")
    mode = Mode(mode) if mode is not None else net.mode
    out: Node = concat_channels(_as_node(source, net), _as_node(target, net))
    for block in net.layers:
        out = block(out, mode.batchnorm_training, track_stats)
    return out


def collect_regularizers(net: NetworkInstance) -> Node:
    """
    Sum of the concrete dropout regularizers of the generator

    Each layer uses the squared norm of the transposed-conv weights of the block
    it follows. Networks without concrete layers return a zero scalar.
    """
    terms: List[Node] = []
    for position, layer in net.dropout_layers.items():
        if not isinstance(layer, ConcreteDropout):
            continue
        weight = net.decoder[position - 1].weight
        terms.append(layer.regularizer(reduce_sum(square(weight))))
    if not terms:
        return constant(np.zeros(1), like=net.head.weight if net.head is not None else None)
    total = terms[0]
    for term in terms[1:]:
        total = add(total, term)
    return total
