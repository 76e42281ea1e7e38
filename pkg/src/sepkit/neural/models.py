"""Embedding and mask-estimation networks.

The embedding net maps normalized mixture magnitudes through stacked
bidirectional LSTM layers and a tanh projection to one embedding vector per
TF bin. The separation net consumes the per-frame embedding block (each
frame's F*D values) through one more bidirectional layer and a ReLU head
that emits S non-negative masks. The magnitude-input variant stacks three
bidirectional layers straight onto the spectral features, keeping the same
total recurrent depth.
"""

from __future__ import annotations

import numpy as np

from ..errors import IncompatibleCheckpoint, InvalidConfig, ShapeMismatch
from . import tensor as T
from .layers import BiLstm, Linear
from .tensor import Tensor


class Model:
    """Named-parameter container with kind/config metadata for checkpoints."""

    kind: str = ""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.config: dict = {}

    def _adopt(self, *modules) -> None:
        for m in modules:
            self.params.update(m.params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def load_param_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.params):
            missing = set(self.params) ^ set(arrays)
            raise IncompatibleCheckpoint(f"parameter names do not match: {sorted(missing)}")
        for name, p in self.params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise IncompatibleCheckpoint(
                    f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}"
                )
        for name, p in self.params.items():
            p.data = np.array(arrays[name], dtype=np.float64, copy=True)
            p.grad = None


class EmbeddingNet(Model):
    """Stacked BiLSTM encoder with a tanh embedding projection."""

    kind = "embedding"

    def __init__(
        self,
        num_bins: int,
        units: int = 64,
        num_layers: int = 2,
        embed_dim: int = 8,
        dropout: float = 0.5,
        seed: int = 0,
    ):
        super().__init__()
        if num_layers < 1 or units < 1 or embed_dim < 1:
            raise InvalidConfig("embedding net sizes must be positive")
        self.config = {
            "num_bins": num_bins,
            "units": units,
            "num_layers": num_layers,
            "embed_dim": embed_dim,
            "dropout": dropout,
        }
        self.num_bins = num_bins
        self.embed_dim = embed_dim
        self.dropout = dropout
        rng = np.random.default_rng(seed)
        self.blstm = []
        size = num_bins
        for i in range(num_layers):
            layer = BiLstm(size, units, rng, f"emb.l{i}")
            self.blstm.append(layer)
            size = 2 * units
        self.projection = Linear(size, num_bins * embed_dim, rng, "emb.proj")
        self._adopt(*self.blstm, self.projection)

    def forward_frames(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        """(T, B, F) normalized magnitudes -> (T, B, F*D) tanh embeddings."""
        if x.data.ndim != 3 or x.data.shape[2] != self.num_bins:
            raise ShapeMismatch(f"expected (T, B, {self.num_bins}) input, got {x.data.shape}")
        h = x
        for i, layer in enumerate(self.blstm):
            h = layer.forward(h)
            if training and i < len(self.blstm) - 1 and self.dropout > 0:
                h = T.dropout(h, self.dropout, rng)
        return T.tanh(self.projection.forward(h))

    def embed(self, mag_norm: np.ndarray) -> np.ndarray:
        """Eval-mode embeddings for one utterance: (T, F) -> (T*F, D)."""
        mag_norm = np.asarray(mag_norm, dtype=np.float64)
        if mag_norm.ndim != 2 or mag_norm.shape[1] != self.num_bins:
            raise ShapeMismatch(f"expected (T, {self.num_bins}) magnitudes, got {mag_norm.shape}")
        v = self.forward_frames(Tensor(mag_norm[:, None, :]))
        return v.data.reshape(-1, self.embed_dim)


class SeparationNet(Model):
    """One BiLSTM over per-frame embedding blocks, ReLU mask head."""

    kind = "separation"

    def __init__(
        self,
        num_bins: int,
        embed_dim: int = 8,
        units: int = 64,
        num_sources: int = 2,
        concat_magnitude: bool = False,
        seed: int = 0,
    ):
        super().__init__()
        self.config = {
            "num_bins": num_bins,
            "embed_dim": embed_dim,
            "units": units,
            "num_sources": num_sources,
            "concat_magnitude": concat_magnitude,
        }
        self.num_bins = num_bins
        self.embed_dim = embed_dim
        self.num_sources = num_sources
        self.concat_magnitude = concat_magnitude
        rng = np.random.default_rng(seed + 1)
        input_size = num_bins * embed_dim + (num_bins if concat_magnitude else 0)
        self.blstm = BiLstm(input_size, units, rng, "sep.l0")
        self.head = Linear(2 * units, num_sources * num_bins, rng, "sep.head")
        self._adopt(self.blstm, self.head)

    def forward_frames(self, v: Tensor, mag_norm: Tensor | None = None) -> Tensor:
        """(T, B, F*D) embeddings -> (T, B, S*F) non-negative mask frames."""
        expected = self.num_bins * self.embed_dim
        if v.data.ndim != 3 or v.data.shape[2] != expected:
            raise ShapeMismatch(f"expected (T, B, {expected}) embeddings, got {v.data.shape}")
        x = v
        if self.concat_magnitude:
            if mag_norm is None:
                raise ShapeMismatch("concat_magnitude is enabled but no magnitudes were given")
            x = T.concat([v, mag_norm], axis=2)
        return T.relu(self.head.forward(self.blstm.forward(x)))


class EmbeddingSeparator(Model):
    """Embedding net feeding the separation net; trained jointly."""

    kind = "embed_sep"

    def __init__(
        self,
        num_bins: int,
        units: int = 64,
        embed_layers: int = 2,
        embed_dim: int = 8,
        num_sources: int = 2,
        dropout: float = 0.5,
        concat_magnitude: bool = False,
        seed: int = 0,
    ):
        super().__init__()
        self.embedding = EmbeddingNet(
            num_bins, units=units, num_layers=embed_layers, embed_dim=embed_dim,
            dropout=dropout, seed=seed,
        )
        self.separation = SeparationNet(
            num_bins, embed_dim=embed_dim, units=units, num_sources=num_sources,
            concat_magnitude=concat_magnitude, seed=seed,
        )
        self.config = {
            "num_bins": num_bins,
            "units": units,
            "embed_layers": embed_layers,
            "embed_dim": embed_dim,
            "num_sources": num_sources,
            "dropout": dropout,
            "concat_magnitude": concat_magnitude,
        }
        self.num_bins = num_bins
        self.num_sources = num_sources
        self._adopt(self.embedding, self.separation)

    def forward_frames(self, x: Tensor, training: bool = False, rng=None) -> tuple[Tensor, Tensor]:
        """Returns (embedding frames (T,B,F*D), mask frames (T,B,S*F))."""
        v = self.embedding.forward_frames(x, training=training, rng=rng)
        masks = self.separation.forward_frames(v, mag_norm=x if self.separation.concat_magnitude else None)
        return v, masks


class MagnitudeSeparator(Model):
    """Mask estimator fed raw normalized magnitudes (no embedding stage),

    with the same total recurrent depth as the embedding pipeline."""

    kind = "upit"

    def __init__(
        self,
        num_bins: int,
        units: int = 64,
        num_layers: int = 3,
        num_sources: int = 2,
        dropout: float = 0.5,
        seed: int = 0,
    ):
        super().__init__()
        self.config = {
            "num_bins": num_bins,
            "units": units,
            "num_layers": num_layers,
            "num_sources": num_sources,
            "dropout": dropout,
        }
        self.num_bins = num_bins
        self.num_sources = num_sources
        self.dropout = dropout
        rng = np.random.default_rng(seed + 2)
        self.blstm = []
        size = num_bins
        for i in range(num_layers):
            layer = BiLstm(size, units, rng, f"upit.l{i}")
            self.blstm.append(layer)
            size = 2 * units
        self.head = Linear(size, num_sources * num_bins, rng, "upit.head")
        self._adopt(*self.blstm, self.head)

    def forward_frames(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        if x.data.ndim != 3 or x.data.shape[2] != self.num_bins:
            raise ShapeMismatch(f"expected (T, B, {self.num_bins}) input, got {x.data.shape}")
        h = x
        for i, layer in enumerate(self.blstm):
            h = layer.forward(h)
            if training and i < len(self.blstm) - 1 and self.dropout > 0:
                h = T.dropout(h, self.dropout, rng)
        return T.relu(self.head.forward(h))


_MODEL_KINDS = {
    "embedding": EmbeddingNet,
    "embed_sep": EmbeddingSeparator,
    "upit": MagnitudeSeparator,
}


def build_model(kind: str, config: dict, seed: int = 0) -> Model:
    if kind not in _MODEL_KINDS:
        raise InvalidConfig(f"unknown model kind {kind!r}")
    return _MODEL_KINDS[kind](seed=seed, **config)


def mask_frames_to_set(mask_frames: np.ndarray, num_sources: int, num_bins: int):
    """(T, S*F) head output -> MaskSet-shaped (S, T, F) array."""
    t = mask_frames.shape[0]
    return mask_frames.reshape(t, num_sources, num_bins).transpose(1, 0, 2)


def forward_embed(net: EmbeddingNet, mag_norm: np.ndarray) -> np.ndarray:
    """Eval-mode per-bin embeddings, rows ordered t*F + f."""
    return net.embed(mag_norm)


def forward_separate(net: SeparationNet, v: np.ndarray, num_frames: int, num_bins: int):
    """Eval-mode masks from a (T*F, D) embedding matrix."""
    from ..masking import MaskSet

    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] != num_frames * num_bins:
        raise ShapeMismatch(f"expected ({num_frames * num_bins}, D) embeddings, got {v.shape}")
    frames = v.reshape(num_frames, 1, num_bins * net.embed_dim)
    out = net.forward_frames(Tensor(frames))
    masks = mask_frames_to_set(out.data[:, 0, :], net.num_sources, num_bins)
    return MaskSet(masks, kind="estimated")
