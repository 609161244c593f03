"""
Layer building blocks: Module base class, Conv2d, Linear, LSTMCell, Embedding

Kernels use Glorot-uniform initialization and biases start at zero, except
the LSTM forget gate bias which starts at one.
"""

from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from tensorgrad import functional as F
from tensorgrad.tensor import Parameter, ShapeError, Tensor


def glorot_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Module:
    """
    Parameter container

    Parameters and sub-modules are discovered from attributes (lists of
    modules included) in assignment order, so names are stable:
    ``encoder.blocks.0.conv.kernel``.
    """

    def __init__(self, name: Optional[str] = None):
        self.name = name or type(self).__name__.lower()

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            path = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{index}.")
                    elif isinstance(item, Parameter):
                        yield f"{path}.{index}", item

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing {missing}, unexpected {unexpected}")
        for name, param in own.items():
            if state[name].shape != param.shape:
                raise ShapeError(f"{name}: checkpoint shape {state[name].shape} vs parameter {param.shape}")
            param.data = np.array(state[name], dtype=param.data.dtype)


class Conv2d(Module):
    """k × k convolution over H × W × C inputs"""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator,
                 stride: int = 1, padding="same", zero_init: bool = False, name: Optional[str] = None):
        super().__init__(name)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        shape = (kernel_size, kernel_size, in_channels, out_channels)
        fan_in = kernel_size * kernel_size * in_channels
        fan_out = kernel_size * kernel_size * out_channels
        init = np.zeros(shape) if zero_init else glorot_uniform(rng, shape, fan_in, fan_out)
        self.kernel = Parameter(init)
        self.bias = Parameter(np.zeros(out_channels))

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.kernel, self.bias, stride=self.stride, padding=self.padding)

    def get_config(self) -> Dict:
        return {"in_channels": self.in_channels, "out_channels": self.out_channels,
                "kernel_size": self.kernel_size, "stride": self.stride, "padding": self.padding}


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 zero_init: bool = False, name: Optional[str] = None):
        super().__init__(name)
        shape = (in_features, out_features)
        self.kernel = Parameter(np.zeros(shape) if zero_init else glorot_uniform(rng, shape, in_features, out_features))
        self.bias = Parameter(np.zeros(out_features))

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.kernel, self.bias)


class LSTMCell(Module):
    """
    LSTM cell with gate blocks (input, forget, output, candidate)

    ``gate_channels`` (4 × hidden) is the width of the fused gate projection.
    Applied to H × W × I inputs it is the spatially-replicated variant:
    shared weights, per-position state.
    """

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator, name: Optional[str] = None):
        super().__init__(name)
        self.input_size = input_size
        self.hidden_size = hidden_size
        gates = 4 * hidden_size
        self.w_x = Parameter(glorot_uniform(rng, (input_size, gates), input_size, gates))
        self.w_h = Parameter(glorot_uniform(rng, (hidden_size, gates), hidden_size, gates))
        bias = np.zeros(gates)
        bias[hidden_size:2 * hidden_size] = 1.0
        self.b = Parameter(bias)

    @property
    def gate_channels(self) -> int:
        return 4 * self.hidden_size

    def initial_state(self, lead_shape: Tuple[int, ...] = ()) -> Tuple[Tensor, Tensor]:
        zeros = np.zeros(lead_shape + (self.hidden_size,))
        return Tensor(zeros), Tensor(zeros)

    def forward(self, x: Tensor, state: Tuple[Tensor, Tensor]) -> Tuple[Tensor, Tensor]:
        h, c = state
        return F.lstm_cell(x, h, c, self.w_x, self.w_h, self.b)


class Embedding(Module):
    """Lookup table: one learned vector per id"""

    def __init__(self, num_embeddings: int, dim: int, rng: np.random.Generator, name: Optional[str] = None):
        super().__init__(name)
        self.num_embeddings = num_embeddings
        self.table = Parameter(rng.uniform(-0.05, 0.05, size=(num_embeddings, dim)))

    def forward(self, index: int) -> Tensor:
        if not 0 <= index < self.num_embeddings:
            raise IndexError(f"embedding id {index} outside [0, {self.num_embeddings})")
        return F.take(self.table, index)
