"""Neural building blocks: autodiff tensors, recurrent layers, networks,
the Adam optimizer, and checkpoint serialization."""

from .tensor import Tensor, set_finite_guard  # noqa: F401
