"""Training objectives.

Deep-clustering affinity loss over embeddings, phase-sensitive mask costs
per output-to-source permutation, exhaustive best-permutation selection,
the discriminative regularizer that pushes non-chosen permutations away,
and the joint objective combining them. All of these build autodiff graphs
when handed tensors, and accept plain arrays for oracle-style evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations as iter_permutations

import numpy as np

from . import dsp, masking
from .errors import InvalidConfig, ShapeMismatch, UnsupportedSourceCount
from .neural import tensor as T
from .neural.tensor import Tensor

# Exhaustive permutation search is factorial; six sources is the ceiling.
MAX_SEARCH_SOURCES = 6


@dataclass
class PermutationTable:
    """All S! assignment costs plus the chosen (minimum-cost) index."""

    perms: list[tuple[int, ...]]
    costs: list[float]
    chosen: int
    nodes: list = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.perms or len(self.perms) != len(self.costs):
            raise ShapeMismatch("permutation table needs one cost per permutation")
        if self.costs[self.chosen] != min(self.costs):
            raise InvalidConfig("chosen permutation must have the minimum cost")

    @property
    def chosen_perm(self) -> tuple[int, ...]:
        return self.perms[self.chosen]

    def non_chosen_costs(self) -> list[float]:
        return [c for i, c in enumerate(self.costs) if i != self.chosen]


@dataclass
class LossReport:
    """Scalar objective with its component breakdown."""

    total: float
    j_dc: float
    phi_star: float
    dl_term: float
    table: PermutationTable | None
    lambda_: float
    alpha: float
    node: Tensor | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "j_dc": self.j_dc,
            "phi_star": self.phi_star,
            "dl_term": self.dl_term,
            "lambda": self.lambda_,
            "alpha": self.alpha,
            "chosen_perm": list(self.table.chosen_perm) if self.table else None,
            "perm_costs": list(self.table.costs) if self.table else None,
        }


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def dc_loss(v, membership, normalize: bool = True) -> Tensor:
    """Affinity mismatch between embeddings and source membership.

    Evaluates ||VV^T - BB^T||_F^2 through the low-rank expansion
    ||V^T V||^2 - 2||V^T B||^2 + ||B^T B||^2, never materializing the
    (TF, TF) affinity matrices. ``normalize`` divides by (TF)^2 so the
    scale is independent of utterance length; pass False for the exact
    unnormalized value.
    """
    vt = _as_tensor(v)
    if isinstance(membership, masking.MembershipMatrix):
        b = membership.onehot
    else:
        b = np.asarray(membership, dtype=np.float64)
    if vt.data.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch("embeddings and membership must be 2-D")
    if vt.data.shape[0] != b.shape[0]:
        raise ShapeMismatch(
            f"row counts differ: embeddings {vt.data.shape[0]}, membership {b.shape[0]}"
        )
    vt_t = T.transpose(vt)
    gram_vv = T.frobenius_sq(T.matmul(vt_t, vt))
    cross = T.frobenius_sq(T.matmul(vt_t, Tensor(b)))
    gram_bb = float(np.sum((b.T @ b) ** 2))
    loss = gram_vv - 2.0 * cross + gram_bb
    if normalize:
        loss = loss / float(vt.data.shape[0]) ** 2
    return loss


def _mask_rows(masks) -> list[Tensor]:
    """Normalize any mask container to a list of per-source (T, F) tensors."""
    if isinstance(masks, masking.MaskSet):
        arr = masks.masks
        return [Tensor(arr[s]) for s in range(arr.shape[0])]
    if isinstance(masks, Tensor):
        if masks.data.ndim != 3:
            raise ShapeMismatch("mask tensor must be (S, T, F)")
        return [masks[s] for s in range(masks.data.shape[0])]
    if isinstance(masks, (list, tuple)):
        return [_as_tensor(m) for m in masks]
    arr = np.asarray(masks, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeMismatch("masks must be (S, T, F)")
    return [Tensor(arr[s]) for s in range(arr.shape[0])]


def pairwise_psa_costs(masks, mixture_magnitude: np.ndarray, targets: list[np.ndarray]):
    """S x S grid of Tensors: cost of assigning output i to source j.

    Each entry is ||mix_mag * mask_i - target_j||_F^2 / (T*F), the per-pair
    share of the utterance-level phase-sensitive error.
    """
    rows = _mask_rows(masks)
    mix_mag = np.asarray(mixture_magnitude, dtype=np.float64)
    if len(rows) != len(targets):
        raise ShapeMismatch(f"{len(rows)} masks vs {len(targets)} targets")
    for m in rows:
        if m.data.shape != mix_mag.shape:
            raise ShapeMismatch(f"mask shape {m.data.shape} != mixture {mix_mag.shape}")
    scale = 1.0 / mix_mag.size
    mix_t = Tensor(mix_mag)
    grid = []
    for mask in rows:
        est = mask * mix_t
        grid.append([T.frobenius_sq(est - Tensor(tgt)) * scale for tgt in targets])
    return grid


def _targets_from_specs(mixture: dsp.Spectrogram, sources: list[dsp.Spectrogram]) -> list[np.ndarray]:
    return [masking.psa_target(s, mixture) for s in sources]


def psa_cost(masks, mixture: dsp.Spectrogram, sources: list[dsp.Spectrogram], perm) -> Tensor:
    """Utterance-level phase-sensitive error under one assignment.

    Output s is compared against the phase-sensitive target of source
    perm[s]; entries are summed over outputs and divided by T*F.
    """
    grid = pairwise_psa_costs(masks, mixture.magnitude, _targets_from_specs(mixture, sources))
    if len(perm) != len(grid):
        raise ShapeMismatch("permutation length must equal the source count")
    total = grid[0][perm[0]]
    for s in range(1, len(grid)):
        total = total + grid[s][perm[s]]
    return total


def permutation_table_from_grid(grid) -> PermutationTable:
    """Enumerate all assignments over a pairwise cost grid; ties resolve to
    the lexicographically smallest permutation."""
    n = len(grid)
    if n > MAX_SEARCH_SOURCES:
        raise UnsupportedSourceCount(f"exhaustive search supports at most {MAX_SEARCH_SOURCES} sources")
    perms = list(iter_permutations(range(n)))
    nodes = []
    for perm in perms:
        node = grid[0][perm[0]]
        for s in range(1, n):
            node = node + grid[s][perm[s]]
        nodes.append(node)
    costs = [float(nd.data) for nd in nodes]
    chosen = 0
    for i, c in enumerate(costs):
        if c < costs[chosen]:
            chosen = i
    return PermutationTable(perms=perms, costs=costs, chosen=chosen, nodes=nodes)


def find_best_perm(masks, mixture: dsp.Spectrogram, sources: list[dsp.Spectrogram]) -> PermutationTable:
    """Exhaustively evaluate every output-to-source assignment from the
    S x S pairwise cost grid and pick the minimum."""
    if len(sources) > MAX_SEARCH_SOURCES:
        raise UnsupportedSourceCount(f"exhaustive search supports at most {MAX_SEARCH_SOURCES} sources")
    grid = pairwise_psa_costs(masks, mixture.magnitude, _targets_from_specs(mixture, sources))
    return permutation_table_from_grid(grid)


def dl_loss(table: PermutationTable, alpha: float) -> float:
    """Chosen-permutation cost minus alpha times the sum of the others.

    alpha = 0 reduces to the plain permutation-invariant objective.
    """
    if alpha < 0:
        raise InvalidConfig("alpha must be non-negative")
    return table.costs[table.chosen] - alpha * sum(table.non_chosen_costs())


def _dl_node(table: PermutationTable, alpha: float) -> Tensor:
    node = table.nodes[table.chosen]
    if alpha > 0:
        for i, other in enumerate(table.nodes):
            if i != table.chosen:
                node = node - alpha * other
    return node


def joint_loss(
    j_dc,
    table: PermutationTable,
    lambda_: float,
    alpha: float = 0.0,
    use_dl: bool = False,
) -> LossReport:
    """Weighted combination of the affinity loss and the permutation term.

    With ``use_dl`` the permutation term carries the discriminative
    regularizer; otherwise it is just the chosen permutation's cost.
    lambda_=1 reduces to the affinity loss alone, lambda_=0 to the
    (regularized) permutation cost alone.
    """
    if not 0.0 <= lambda_ <= 1.0:
        raise InvalidConfig("lambda must lie in [0, 1]")
    if alpha < 0:
        raise InvalidConfig("alpha must be non-negative")

    j_dc_node = j_dc if isinstance(j_dc, Tensor) else None
    j_dc_val = float(j_dc.data) if isinstance(j_dc, Tensor) else float(j_dc)
    phi_star = table.costs[table.chosen]
    dl_term = dl_loss(table, alpha) if use_dl else phi_star
    total = lambda_ * j_dc_val + (1.0 - lambda_) * dl_term

    node = None
    if table.nodes is not None:
        perm_node = _dl_node(table, alpha) if use_dl else table.nodes[table.chosen]
        if j_dc_node is not None:
            node = lambda_ * j_dc_node + (1.0 - lambda_) * perm_node
        elif lambda_ == 0.0:
            node = (1.0 - lambda_) * perm_node
        else:
            node = lambda_ * Tensor(j_dc_val) + (1.0 - lambda_) * perm_node

    return LossReport(
        total=total,
        j_dc=j_dc_val,
        phi_star=phi_star,
        dl_term=dl_term,
        table=table,
        lambda_=lambda_,
        alpha=alpha,
        node=node,
    )
