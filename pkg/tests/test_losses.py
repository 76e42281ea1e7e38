from itertools import permutations

import numpy as np
import pytest
from gradcheck import finite_difference, relative_error

from sepkit import losses, masking
from sepkit.errors import InvalidConfig, ShapeMismatch, UnsupportedSourceCount
from sepkit.neural.tensor import Tensor


def dense_dc_loss(v, b):
    """Oracle: materialize the affinity matrices."""
    v = np.asarray(v, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.sum((v @ v.T - b @ b.T) ** 2))


def onehot(labels, classes):
    out = np.zeros((len(labels), classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def random_specs(make_tiny_spec, seed, n_sources=2, t=4, f=5):
    rng = np.random.default_rng(seed)
    srcs = [
        make_tiny_spec(rng.standard_normal((t, f)) + 1j * rng.standard_normal((t, f)))
        for _ in range(n_sources)
    ]
    mix = make_tiny_spec(sum(s.complex_bins for s in srcs))
    return mix, srcs


class TestDcLoss:
    def test_identical_affinities_give_zero(self):
        b = onehot([0, 1, 0, 1], 2)
        assert losses.dc_loss(b, b, normalize=False).item() == 0.0

    def test_two_bin_example(self):
        v = np.array([[1.0], [1.0]])
        b = np.eye(2)
        assert losses.dc_loss(v, b, normalize=False).item() == pytest.approx(2.0)
        assert losses.dc_loss(v, b, normalize=True).item() == pytest.approx(2.0 / 4.0)

    @pytest.mark.parametrize("seed", range(8))
    def test_lowrank_matches_dense_oracle(self, seed):
        rng = np.random.default_rng(seed)
        tf = int(rng.integers(4, 65))
        d = int(rng.integers(1, 6))
        c = int(rng.integers(2, 4))
        v = rng.standard_normal((tf, d))
        b = onehot(rng.integers(0, c, size=tf), c)
        got = losses.dc_loss(v, b, normalize=False).item()
        want = dense_dc_loss(v, b)
        assert got == pytest.approx(want, rel=1e-9)

    def test_invariant_under_membership_column_permutation(self):
        rng = np.random.default_rng(1)
        v = rng.standard_normal((12, 3))
        b = onehot(rng.integers(0, 3, size=12), 3)
        base = losses.dc_loss(v, b).item()
        for perm in permutations(range(3)):
            assert losses.dc_loss(v, b[:, perm]).item() == pytest.approx(base, rel=1e-12)

    def test_non_negative(self):
        rng = np.random.default_rng(2)
        for seed in range(5):
            v = np.random.default_rng(seed).standard_normal((10, 2))
            b = onehot(rng.integers(0, 2, size=10), 2)
            assert losses.dc_loss(v, b).item() >= 0.0

    def test_row_mismatch_rejected(self):
        with pytest.raises(ShapeMismatch):
            losses.dc_loss(np.zeros((4, 2)), onehot([0, 1], 2))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        v = rng.standard_normal((8, 3))
        b = onehot(rng.integers(0, 2, size=8), 2)
        vt = Tensor(v.copy(), requires_grad=True)
        losses.dc_loss(vt, b).backward()
        numeric = finite_difference(lambda arrs: losses.dc_loss(arrs[0], b).item(), [v])
        assert relative_error(vt.grad, numeric[0]) < 1e-4

    def test_accepts_membership_matrix_type(self, make_tiny_spec):
        mix, srcs = random_specs(make_tiny_spec, 4)
        member = masking.dominant_membership(srcs)
        v = np.random.default_rng(5).standard_normal((member.onehot.shape[0], 4))
        assert losses.dc_loss(v, member).item() > 0


class TestPsaCost:
    def test_ipsm_masks_have_zero_cost_under_identity(self, make_tiny_spec):
        mix, srcs = random_specs(make_tiny_spec, 6)
        ideal = masking.ipsm(srcs, mix)
        cost = losses.psa_cost(ideal, mix, srcs, perm=(0, 1)).item()
        assert abs(cost) < 1e-10

    def test_zero_masks_cost_equals_target_energy(self, make_tiny_spec):
        mix, srcs = random_specs(make_tiny_spec, 7)
        t, f = mix.magnitude.shape
        zero = masking.MaskSet(np.zeros((2, t, f)), "estimated")
        got = losses.psa_cost(zero, mix, srcs, perm=(0, 1)).item()
        want = sum(np.sum(masking.psa_target(s, mix) ** 2) for s in srcs) / (t * f)
        assert got == pytest.approx(want, rel=1e-12)

    def test_relabeling_masks_and_perm_together_is_invariant(self, make_tiny_spec):
        mix, srcs = random_specs(make_tiny_spec, 8)
        rng = np.random.default_rng(9)
        m = rng.random((2,) + mix.magnitude.shape)
        a = losses.psa_cost(masking.MaskSet(m, "estimated"), mix, srcs, (0, 1)).item()
        b = losses.psa_cost(masking.MaskSet(m[::-1].copy(), "estimated"), mix, srcs, (1, 0)).item()
        assert a == pytest.approx(b, rel=1e-12)

    def test_gradient_matches_finite_differences(self, make_tiny_spec):
        mix, srcs = random_specs(make_tiny_spec, 10)
        rng = np.random.default_rng(11)
        m = rng.random((2,) + mix.magnitude.shape)
        mt = Tensor(m.copy(), requires_grad=True)
        losses.psa_cost(mt, mix, srcs, (0, 1)).backward()
        numeric = finite_difference(
            lambda arrs: losses.psa_cost(arrs[0], mix, srcs, (0, 1)).item(), [m]
        )
        assert relative_error(mt.grad, numeric[0]) < 1e-4

    def test_mask_count_mismatch_rejected(self, make_tiny_spec):
        mix, srcs = random_specs(make_tiny_spec, 12)
        t, f = mix.magnitude.shape
        with pytest.raises(ShapeMismatch):
            losses.psa_cost(np.zeros((3, t, f)), mix, srcs, (0, 1, 2))


class TestFindBestPerm:
    def test_aligned_masks_choose_identity(self, make_tiny_spec):
        mix, srcs = random_specs(make_tiny_spec, 13)
        table = losses.find_best_perm(masking.ipsm(srcs, mix), mix, srcs)
        assert table.chosen_perm == (0, 1)
        assert table.costs[table.chosen] == min(table.costs)

    def test_swapped_masks_choose_swap(self, make_tiny_spec):
        mix, srcs = random_specs(make_tiny_spec, 14)
        ideal = masking.ipsm(srcs, mix)
        swapped = masking.MaskSet(ideal.masks[::-1].copy(), "ipsm")
        table = losses.find_best_perm(swapped, mix, srcs)
        assert table.chosen_perm == (1, 0)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_bruteforce_for_three_sources(self, make_tiny_spec, seed):
        mix, srcs = random_specs(make_tiny_spec, 20 + seed, n_sources=3)
        rng = np.random.default_rng(40 + seed)
        m = masking.MaskSet(rng.random((3,) + mix.magnitude.shape), "estimated")
        table = losses.find_best_perm(m, mix, srcs)
        # independent oracle: evaluate Eq-style cost for every permutation
        brute = {
            perm: losses.psa_cost(m, mix, srcs, perm).item()
            for perm in permutations(range(3))
        }
        best = min(brute, key=brute.get)
        assert table.chosen_perm == best
        for perm, cost in brute.items():
            assert table.costs[table.perms.index(perm)] == pytest.approx(cost, rel=1e-12)

    def test_relabeling_outputs_maps_chosen_permutation(self, make_tiny_spec):
        mix, srcs = random_specs(make_tiny_spec, 15)
        rng = np.random.default_rng(16)
        m = rng.random((2,) + mix.magnitude.shape)
        t1 = losses.find_best_perm(masking.MaskSet(m, "estimated"), mix, srcs)
        t2 = losses.find_best_perm(masking.MaskSet(m[::-1].copy(), "estimated"), mix, srcs)
        assert min(t1.costs) == pytest.approx(min(t2.costs), rel=1e-12)
        relabeled = tuple(t2.chosen_perm[{0: 1, 1: 0}[s]] for s in range(2))
        assert relabeled == t1.chosen_perm

    def test_too_many_sources_rejected(self, make_tiny_spec):
        mix, srcs = random_specs(make_tiny_spec, 18, n_sources=2)
        seven_sources = srcs * 3 + srcs[:1]
        masks = np.zeros((7,) + mix.magnitude.shape)
        with pytest.raises(UnsupportedSourceCount):
            losses.find_best_perm(masks, mix, seven_sources)


class TestDlLoss:
    def _table(self, costs, chosen=None):
        perms = list(permutations(range(2))) if len(costs) == 2 else list(
            permutations(range(3))
        )
        chosen = int(np.argmin(costs)) if chosen is None else chosen
        return losses.PermutationTable(perms=perms[: len(costs)], costs=costs, chosen=chosen)

    def test_alpha_zero_equals_chosen_cost(self):
        table = self._table([1.5, 4.0])
        assert losses.dl_loss(table, 0.0) == 1.5

    def test_worked_example(self):
        table = self._table([1.0, 4.0])
        assert losses.dl_loss(table, 0.1) == pytest.approx(1.0 - 0.4)

    def test_three_source_enumeration(self):
        rng = np.random.default_rng(19)
        costs = sorted(rng.uniform(1, 10, size=6).tolist())
        table = self._table(costs)
        want = costs[0] - 0.1 * sum(costs[1:])
        assert losses.dl_loss(table, 0.1) == pytest.approx(want, rel=1e-12)

    def test_negative_alpha_rejected(self):
        table = self._table([1.0, 2.0])
        with pytest.raises(InvalidConfig):
            losses.dl_loss(table, -0.5)

    def test_non_increasing_in_alpha(self):
        table = self._table([2.0, 3.0, 5.0])
        values = [losses.dl_loss(table, a) for a in (0.0, 0.05, 0.1, 0.5)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_may_be_negative(self):
        table = self._table([1.0, 2.0])
        assert losses.dl_loss(table, 1.0) < 0


class TestJointLoss:
    def _table(self, costs=(2.0, 6.0)):
        return losses.PermutationTable(
            perms=list(permutations(range(2))), costs=list(costs), chosen=int(np.argmin(costs))
        )

    def test_lambda_one_reduces_to_dc(self):
        report = losses.joint_loss(10.0, self._table(), lambda_=1.0)
        assert report.total == 10.0

    def test_lambda_zero_with_dl_reduces_to_dl(self):
        table = self._table()
        report = losses.joint_loss(10.0, table, lambda_=0.0, alpha=0.1, use_dl=True)
        assert report.total == pytest.approx(losses.dl_loss(table, 0.1))

    def test_worked_example_without_dl(self):
        report = losses.joint_loss(10.0, self._table((2.0, 6.0)), lambda_=0.05)
        assert report.total == pytest.approx(0.05 * 10.0 + 0.95 * 2.0)

    def test_report_reproduces_total_from_components(self):
        for use_dl in (False, True):
            report = losses.joint_loss(3.7, self._table(), lambda_=0.3, alpha=0.2, use_dl=use_dl)
            rebuilt = report.lambda_ * report.j_dc + (1 - report.lambda_) * report.dl_term
            assert report.total == pytest.approx(rebuilt, rel=1e-12)

    def test_lambda_out_of_range_rejected(self):
        with pytest.raises(InvalidConfig):
            losses.joint_loss(1.0, self._table(), lambda_=1.5)

    def test_gradient_through_joint_loss(self, make_tiny_spec):
        mix, srcs = random_specs(make_tiny_spec, 21)
        rng = np.random.default_rng(22)
        m = rng.random((2,) + mix.magnitude.shape)
        member = masking.dominant_membership(srcs)
        v0 = rng.standard_normal((member.onehot.shape[0], 3))
        targets = [masking.psa_target(s, mix) for s in srcs]

        def build(mask_arr, v_arr):
            grid = losses.pairwise_psa_costs(mask_arr, mix.magnitude, targets)
            table = losses.permutation_table_from_grid(grid)
            j_dc = losses.dc_loss(v_arr, member)
            return losses.joint_loss(j_dc, table, lambda_=0.4, alpha=0.1, use_dl=True)

        mt = Tensor(m.copy(), requires_grad=True)
        vt = Tensor(v0.copy(), requires_grad=True)
        build(mt, vt).node.backward()
        numeric = finite_difference(lambda arrs: build(arrs[0], arrs[1]).total, [m, v0])
        assert relative_error(mt.grad, numeric[0]) < 1e-4
        assert relative_error(vt.grad, numeric[1]) < 1e-4
