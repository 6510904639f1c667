import numpy as np
import pytest

from metricboost.diversity import (
    RegressorBank,
    activation_loss,
    adversarial_loss,
    diversity_loss,
    init_regressor,
    regressor_forward,
    Regressor,
)
from metricboost.ensemble import EnsembleModel, GroupPartition, init_model
from metricboost.errors import InvalidArgument
from metricboost.linalg import make_rng


def _witness_model():
    """Block-diagonal W: group 1 reads inputs 0..3, group 2 reads 4..7.

    Columns are unit vectors, so the weight penalty is exactly zero; inputs
    living in one block activate exactly one group.
    """
    W = np.zeros((8, 4))
    W[0, 0] = 1.0
    W[1, 1] = 1.0
    W[4, 2] = 1.0
    W[5, 3] = 1.0
    return EnsembleModel(W, GroupPartition((2, 2)))


class TestActivationLoss:
    def test_witness_is_zero(self):
        model = _witness_model()
        X = np.zeros((4, 8))
        X[0, 0] = 1.0  # activates group 1 only
        X[1, 1] = 2.0
        X[2, 4] = -1.0  # activates group 2 only
        X[3, 5] = 3.0
        res = activation_loss(model, X, lambda_w=5.0)
        assert res.loss == pytest.approx(0.0, abs=1e-15)
        assert res.sup_term == 0.0
        assert res.weight_term == 0.0
        np.testing.assert_allclose(res.grad_W, 0.0, atol=1e-15)

    def test_nonzero_when_cross_activated(self):
        model = _witness_model()
        X = np.zeros((1, 8))
        X[0, 0] = 1.0
        X[0, 4] = 1.0  # both groups active
        res = activation_loss(model, X, lambda_w=0.0)
        assert res.sup_term > 0.0

    def test_zero_matrix_shows_weight_penalty(self):
        part = GroupPartition((2, 2))
        model = EnsembleModel(np.zeros((3, 4)), part)
        lam = 2.5
        res = activation_loss(model, np.ones((2, 3)), lam)
        assert res.sup_term == 0.0
        assert res.weight_term == pytest.approx(4.0)  # d columns, (0 - 1)^2 each
        assert res.loss == pytest.approx(lam * 4.0)

    def test_empty_batch_rejected(self):
        model = _witness_model()
        with pytest.raises(InvalidArgument):
            activation_loss(model, np.zeros((0, 8)), 1.0)

    def test_gradient_matches_finite_differences(self):
        rng = make_rng(60)
        model = init_model(rng, 8, GroupPartition((3, 3)))
        X = rng.standard_normal((4, 8))
        lam = 0.7
        res = activation_loss(model, X, lam)
        W = model.W
        h = 1e-6
        worst = 0.0
        for k in range(W.size):
            orig = W.flat[k]
            W.flat[k] = orig + h
            up = activation_loss(model, X, lam).loss
            W.flat[k] = orig - h
            dn = activation_loss(model, X, lam).loss
            W.flat[k] = orig
            fd = (up - dn) / (2 * h)
            worst = max(worst, abs(res.grad_W.flat[k] - fd))
        scale = max(1.0, np.abs(res.grad_W).max())
        assert worst / scale < 1e-6


class TestRegressor:
    def test_zero_weights_output_bias(self):
        reg = Regressor(np.zeros((4, 3)), np.zeros(4), np.zeros((2, 4)), np.array([1.5, -2.0]))
        np.testing.assert_array_equal(regressor_forward(reg, np.ones(3)), [1.5, -2.0])

    def test_rectifier_passthrough(self):
        # Nonnegative W1 rows and nonnegative input keep the ReLU inactive,
        # and an identity W2 slice reproduces W1 v.
        W1 = np.array([[1.0, 2.0], [0.5, 0.0]])
        reg = Regressor(W1, np.zeros(2), np.eye(2), np.zeros(2))
        v = np.array([1.0, 3.0])
        np.testing.assert_allclose(regressor_forward(reg, v), W1 @ v)

    def test_matches_composed_matvec_oracle(self):
        rng = make_rng(61)
        reg = init_regressor(rng, d_in=5, d_out=3, hidden=7)
        v = rng.standard_normal(5)
        oracle = reg.W2 @ np.maximum(reg.W1 @ v + reg.b1, 0.0) + reg.b2
        np.testing.assert_allclose(regressor_forward(reg, v), oracle, atol=1e-12)

    def test_dim_mismatch(self):
        rng = make_rng(62)
        reg = init_regressor(rng, d_in=5, d_out=3, hidden=4)
        with pytest.raises(InvalidArgument):
            regressor_forward(reg, np.ones(4))

    def test_bank_layout(self):
        rng = make_rng(63)
        part = GroupPartition((2, 3, 4))
        bank = RegressorBank.create(rng, part, hidden=6)
        assert len(bank) == 3  # M(M-1)/2
        assert bank.keys() == [(0, 1), (0, 2), (1, 2)]
        assert bank[(0, 2)].d_in == 4 and bank[(0, 2)].d_out == 2
        assert bank.matches(part)
        assert not bank.matches(GroupPartition((3, 3, 3)))


class TestAdversarialLoss:
    def _setup(self, seed=70, sizes=(2, 3), h=6, n=4, hidden=5):
        rng = make_rng(seed)
        model = init_model(rng, h, GroupPartition(sizes))
        bank = RegressorBank.create(rng, model.partition, hidden=hidden)
        X = rng.standard_normal((n, h))
        return model, bank, X

    def test_zero_target_annihilates_similarity(self):
        model, bank, X = self._setup()
        model.W[:, :2] = 0.0  # group 1 output is zero -> every product vanishes
        res = adversarial_loss(model, bank, X, 1.0)
        assert res.sim_term == pytest.approx(0.0, abs=1e-15)

    def test_scalar_example(self):
        # d_i = d_j = 1, g output 1, f_i = 0.5 -> L_sim = (0.5 * 1)^2 / 1
        model = EnsembleModel(np.array([[0.5, 1.0]]), GroupPartition((1, 1)))
        reg = Regressor(np.zeros((1, 1)), np.zeros(1), np.zeros((1, 1)), np.ones(1))
        bank = RegressorBank({(0, 1): reg})
        X = np.ones((1, 1))
        res = adversarial_loss(model, bank, X, 0.0)
        assert res.sim_term == pytest.approx(0.25)

    def test_reversal_is_exact_negation(self):
        model, bank, X = self._setup(seed=71)
        res = adversarial_loss(model, bank, X, 0.8)
        np.testing.assert_array_equal(res.grad_W_sim, -res.grad_W_sim_unreversed)

    def test_reverse_target_path_flag(self):
        model, bank, X = self._setup(seed=72)
        both = adversarial_loss(model, bank, X, 0.5, reverse_target_path=True)
        source_only = adversarial_loss(model, bank, X, 0.5, reverse_target_path=False)
        # The two modes agree on the source-group columns and differ in sign
        # on the target-group columns.
        sl_target = model.partition.slices()[0]
        sl_source = model.partition.slices()[1]
        np.testing.assert_allclose(
            both.grad_W_sim[:, sl_source], source_only.grad_W_sim[:, sl_source], atol=1e-15
        )
        np.testing.assert_allclose(
            both.grad_W_sim[:, sl_target], -source_only.grad_W_sim[:, sl_target], atol=1e-15
        )

    def test_sim_normalizer_flag(self):
        model, bank, X = self._setup(seed=73, sizes=(2, 4))
        dj = adversarial_loss(model, bank, X, 0.0, sim_normalizer="d_j")
        di = adversarial_loss(model, bank, X, 0.0, sim_normalizer="d_i")
        assert di.sim_term == pytest.approx(dj.sim_term * 4.0 / 2.0)

    def test_regressor_ascent_and_embedding_descent(self):
        # First-order check of the minimax directions on a fixed instance.
        model, bank, X = self._setup(seed=74)
        lam = 0.0  # isolate the similarity game
        res = adversarial_loss(model, bank, X, lam)
        step = 1e-4

        bank2 = bank.copy()
        for key in bank2.keys():
            rg = res.regressor_grads[key]
            reg = bank2[key]
            reg.W1 -= step * rg.W1
            reg.b1 -= step * rg.b1
            reg.W2 -= step * rg.W2
            reg.b2 -= step * rg.b2
        after_reg = adversarial_loss(model, bank2, X, lam)
        assert after_reg.sim_term >= res.sim_term - 1e-12

        model2 = EnsembleModel(model.W - step * res.grad_W_sim, model.partition)
        after_emb = adversarial_loss(model2, bank, X, lam)
        assert after_emb.sim_term <= res.sim_term + 1e-12

    def test_bank_partition_mismatch(self):
        model, bank, X = self._setup(seed=75)
        other = init_model(make_rng(0), 6, GroupPartition((3, 2)))
        with pytest.raises(InvalidArgument):
            adversarial_loss(other, bank, X, 1.0)

    def test_weight_penalty_gradients_match_fd(self):
        model, bank, X = self._setup(seed=76, sizes=(2, 2), h=4, n=2, hidden=3)
        lam = 1.3
        res = adversarial_loss(model, bank, X, lam)
        # Penalty component of the embedding gradient.
        pen_grad = res.grad_W - res.grad_W_sim
        h = 1e-6
        W = model.W
        for k in range(W.size):
            orig = W.flat[k]
            W.flat[k] = orig + h
            up = lam * float(np.sum((np.sum(W * W, axis=0) - 1.0) ** 2))
            W.flat[k] = orig - h
            dn = lam * float(np.sum((np.sum(W * W, axis=0) - 1.0) ** 2))
            W.flat[k] = orig
            assert abs(pen_grad.flat[k] - (up - dn) / (2 * h)) < 1e-5


class TestDispatch:
    def test_dispatch_activation(self):
        model = _witness_model()
        res = diversity_loss("activation", model, np.ones((2, 8)), 1.0)
        assert hasattr(res, "sup_term")

    def test_dispatch_adversarial_needs_bank(self):
        model = _witness_model()
        with pytest.raises(InvalidArgument):
            diversity_loss("adversarial", model, np.ones((2, 8)), 1.0)

    def test_dispatch_unknown(self):
        model = _witness_model()
        with pytest.raises(InvalidArgument):
            diversity_loss("dropout", model, np.ones((2, 8)), 1.0)
