"""Ideal mask targets and mask-based reconstruction.

The phase-sensitive target for a source is |X_s|cos(theta_mix - theta_s);
dividing it by the mixture magnitude gives the ideal phase-sensitive mask.
Estimated magnitudes are mixture magnitude times a mask, and sources are
reconstructed with the mixture phase.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dsp
from .errors import ContractViolation, InvalidConfig, ShapeMismatch

MASK_KINDS = ("estimated", "ipsm", "binary")

# Mixture bins quieter than this carry no trainable information; their
# ideal masks are defined as 0 instead of dividing by ~0.
MIX_MAG_EPS = 1e-8


@dataclass(frozen=True)
class MaskSet:
    """S real-valued (T, F) masks of one kind."""

    masks: np.ndarray
    kind: str

    def __post_init__(self):
        masks = np.asarray(self.masks, dtype=np.float64)
        if masks.ndim != 3:
            raise ShapeMismatch("masks must have shape (S, T, F)")
        if self.kind not in MASK_KINDS:
            raise InvalidConfig(f"unknown mask kind {self.kind!r}")
        if self.kind == "binary":
            if not np.all((masks == 0.0) | (masks == 1.0)):
                raise ContractViolation("binary masks must be 0/1")
            if not np.all(masks.sum(axis=0) == 1.0):
                raise ContractViolation("binary masks must sum to 1 at every bin")
        object.__setattr__(self, "masks", masks)

    @property
    def num_sources(self) -> int:
        return self.masks.shape[0]


@dataclass(frozen=True)
class MembershipMatrix:
    """One-hot dominant-source indicator per TF bin, rows ordered t*F + f."""

    onehot: np.ndarray
    num_frames: int
    num_bins: int

    def __post_init__(self):
        onehot = np.asarray(self.onehot, dtype=np.float64)
        if onehot.ndim != 2 or onehot.shape[0] != self.num_frames * self.num_bins:
            raise ShapeMismatch("membership must be (T*F, C)")
        rowsum = onehot.sum(axis=1)
        if not (np.all((onehot == 0) | (onehot == 1)) and np.all(rowsum == 1)):
            raise ContractViolation("each membership row must have exactly one 1")
        object.__setattr__(self, "onehot", onehot)

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.onehot, axis=1)


def _check_same_shape(sources: list[dsp.Spectrogram], mixture: dsp.Spectrogram) -> None:
    for s in sources:
        if s.complex_bins.shape != mixture.complex_bins.shape:
            raise ShapeMismatch(
                f"source shape {s.complex_bins.shape} != mixture {mixture.complex_bins.shape}"
            )


def psa_target(source: dsp.Spectrogram, mixture: dsp.Spectrogram) -> np.ndarray:
    """Phase-sensitive magnitude target |X_s| cos(theta_mix - theta_s)."""
    if source.complex_bins.shape != mixture.complex_bins.shape:
        raise ShapeMismatch("source and mixture spectrogram shapes differ")
    return source.magnitude * np.cos(mixture.phase - source.phase)


def ipsm(
    sources: list[dsp.Spectrogram],
    mixture: dsp.Spectrogram,
    clamp: tuple[float, float] | None = None,
    eps: float = MIX_MAG_EPS,
) -> MaskSet:
    """Ideal phase-sensitive masks, one per source.

    Unbounded by default (values above 1 and below 0 are meaningful);
    ``clamp`` optionally restricts the range for ablations. Bins where the
    mixture magnitude is below ``eps`` get mask 0.
    """
    if len(sources) < 2:
        raise InvalidConfig("need at least two sources")
    _check_same_shape(sources, mixture)
    quiet = mixture.magnitude < eps
    denom = np.where(quiet, 1.0, mixture.magnitude)
    masks = np.stack([psa_target(s, mixture) / denom for s in sources])
    masks[:, quiet] = 0.0
    if clamp is not None:
        masks = np.clip(masks, clamp[0], clamp[1])
    return MaskSet(masks, kind="ipsm")


def dominant_membership(sources: list[dsp.Spectrogram]) -> MembershipMatrix:
    """One-hot rows marking the highest-magnitude source per TF bin.

    Ties go to the lowest source index.
    """
    if len(sources) < 2:
        raise InvalidConfig("need at least two sources")
    _check_same_shape(sources, sources[0])
    mags = np.stack([s.magnitude for s in sources])  # (S, T, F)
    labels = np.argmax(mags, axis=0).reshape(-1)  # argmax takes the first max
    onehot = np.zeros((labels.size, len(sources)))
    onehot[np.arange(labels.size), labels] = 1.0
    t, f = sources[0].magnitude.shape
    return MembershipMatrix(onehot, num_frames=t, num_bins=f)


def apply_mask(mixture: dsp.Spectrogram, masks: MaskSet) -> list[dsp.Spectrogram]:
    """Per-source estimated spectrograms: mixture magnitude times mask,
    mixture phase.

    Phase-sensitive masks may be negative; the negative gain is folded into
    the stored phase so that the magnitude cache stays non-negative.
    """
    if masks.masks.shape[1:] != mixture.magnitude.shape:
        raise ShapeMismatch(
            f"masks {masks.masks.shape[1:]} do not match mixture {mixture.magnitude.shape}"
        )
    if masks.kind == "estimated" and np.min(masks.masks) < 0:
        raise ContractViolation("estimated masks must be non-negative")
    phasor = np.exp(1j * mixture.phase)
    out = []
    for s in range(masks.num_sources):
        gained = mixture.magnitude * masks.masks[s]
        out.append(
            dsp.Spectrogram.from_complex(
                gained * phasor, mixture.config, mixture.sample_rate, mixture.num_samples
            )
        )
    return out


def reconstruct(mixture: dsp.Spectrogram, masks: MaskSet) -> list[dsp.AudioBuffer]:
    """Masked magnitudes + mixture phase, back to the time domain."""
    return [dsp.istft(spec) for spec in apply_mask(mixture, masks)]
