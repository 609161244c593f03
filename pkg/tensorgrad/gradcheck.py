"""
Central finite-difference gradient checks

Run under ``precision("float64")``: float32 central differences are too
noisy for rtol 1e-3.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from tensorgrad.tensor import Tensor, backward

logger = logging.getLogger(__name__)


@dataclass
class GradcheckResult:
    passed: bool
    checked: int
    max_abs_error: float
    failures: List[str] = field(default_factory=list)


def numerical_gradient(fn: Callable[[], Tensor], tensor: Tensor, eps: float = 1e-6,
                       indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """d fn / d tensor by central differences at the given flat indices (all by default)"""
    flat = tensor.data.reshape(-1)
    grad = np.zeros_like(flat)
    for index in (range(flat.size) if indices is None else indices):
        original = flat[index]
        flat[index] = original + eps
        plus = fn().item()
        flat[index] = original - eps
        minus = fn().item()
        flat[index] = original
        grad[index] = (plus - minus) / (2.0 * eps)
    return grad.reshape(tensor.shape)


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-6,
              rtol: float = 1e-3, atol: float = 1e-6, max_entries: Optional[int] = None,
              rng: Optional[np.random.Generator] = None) -> GradcheckResult:
    """
    Compare backward() against central differences for every input

    Args:
        fn: rebuilds the scalar output from the current input values
        inputs: tensors with requires_grad whose gradients are checked
        max_entries: check at most this many randomly chosen entries per input
    """
    for t in inputs:
        t.zero_grad()
    backward(fn())
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    rng = rng or np.random.default_rng(0)
    failures: List[str] = []
    checked = 0
    max_error = 0.0
    for position, (tensor, grad) in enumerate(zip(inputs, analytic)):
        size = tensor.data.size
        if max_entries is not None and size > max_entries:
            indices = np.sort(rng.choice(size, max_entries, replace=False))
        else:
            indices = np.arange(size)
        numeric = numerical_gradient(fn, tensor, eps, indices).reshape(-1)
        got = grad.reshape(-1)
        for index in indices:
            error = abs(got[index] - numeric[index])
            max_error = max(max_error, error)
            checked += 1
            if error > atol + rtol * abs(numeric[index]):
                label = tensor.name or f"input[{position}]"
                failures.append(f"{label}[{index}]: analytic {got[index]:.8g} vs numeric {numeric[index]:.8g}")

    if failures:
        logger.warning(f"gradcheck: {len(failures)} of {checked} entries off (max abs error {max_error:.3g})")
    return GradcheckResult(not failures, checked, max_error, failures)


def assert_gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], **kwargs) -> GradcheckResult:
    result = gradcheck(fn, inputs, **kwargs)
    assert result.passed, "gradient mismatch:\n" + "\n".join(result.failures[:20])
    return result
