import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from csnet import autodiff as ad
from csnet.autodiff import Param, Tensor, backward, grad_check, zero_grads
from csnet.errors import ContractError, ShapeError
from csnet.model import (
    EmbeddingNet,
    LossConfig,
    MaskBank,
    csn_loss,
    embed,
    embedding_loss,
    load_checkpoint,
    mask,
    mask_loss,
    masked_distance,
    save_checkpoint,
    triplet_loss_masked,
    triplet_loss_standard,
)
from csnet.verify import reference_csn_loss

vec = lambda *xs: Tensor(list(map(float, xs)))


def zero_weight_net(input_dim=4, d=3):
    net = EmbeddingNet([input_dim, 5], d, seed=0)
    net.set_state([np.zeros_like(s) for s in net.get_state()])
    return net


def identity_net(n):
    net = EmbeddingNet([n, n], n, seed=0)
    net.set_state([np.eye(n), np.zeros(n), np.eye(n)])
    return net


class TestEmbed:
    def test_zero_weight_network_embeds_to_zero(self, rng):
        net = zero_weight_net()
        y = embed(net, Tensor(rng.normal(size=(6, 4))))
        assert np.array_equal(y.data, np.zeros((6, 3)))

    def test_identity_layers_pass_nonnegative_input_through(self, rng):
        net = identity_net(5)
        x = rng.uniform(0.0, 2.0, size=(4, 5))
        y = embed(net, Tensor(x))
        assert np.allclose(y.data, x, atol=1e-15)

    def test_two_layer_net_matches_hand_composed_chain(self):
        rng = np.random.default_rng(3)
        net = EmbeddingNet([6, 8, 5], 4, seed=11)
        x = rng.normal(size=(7, 6))
        y = embed(net, Tensor(x)).data
        (w0, b0), (w1, b1) = net.hidden
        h = np.maximum(x @ w0.data + b0.data, 0.0)
        h = np.maximum(h @ w1.data + b1.data, 0.0)
        want = h @ net.projection.data.T
        assert np.allclose(y, want, atol=1e-12)

    def test_dimension_mismatch(self):
        net = EmbeddingNet([6, 8], 4, seed=0)
        with pytest.raises(ShapeError):
            embed(net, Tensor(np.ones((2, 5))))


class TestMask:
    def test_rectifies_column(self):
        bank = MaskBank(np.array([[0.9, 1.0], [-0.3, 1.0], [0.0, 1.0]]), trainable=True)
        assert mask(bank, 0).data.tolist() == [0.9, 0.0, 0.0]

    def test_all_ones_column(self):
        bank = MaskBank(np.ones((3, 2)), trainable=True)
        assert mask(bank, 1).data.tolist() == [1.0, 1.0, 1.0]

    def test_out_of_range_condition(self):
        bank = MaskBank(np.ones((3, 2)), trainable=True)
        with pytest.raises(IndexError):
            mask(bank, 2)

    def test_gradient_zero_where_beta_negative(self):
        bank = MaskBank(np.array([[0.5, 0.2], [-0.4, 0.3], [0.8, -0.9]]), trainable=True)
        fn = lambda: ad.sum_all(ad.mul(mask(bank, 0), mask(bank, 0)))
        assert grad_check(fn, [bank.beta], eps=1e-6) < 1e-6
        zero_grads([bank.beta])
        backward(fn())
        assert bank.beta.grad[1, 0] == 0.0  # beta < 0 is rectified away


class TestMaskedDistance:
    def test_identical_inputs_zero(self):
        assert masked_distance(vec(1, 2), vec(1, 2), vec(0.3, 7.0)).item() == 0.0

    def test_345_triangle_with_ones_mask(self):
        assert masked_distance(vec(3, 0), vec(0, 4), vec(1, 1)).item() == 5.0

    def test_gated_dimension_drops_out(self):
        assert masked_distance(vec(3, 0), vec(0, 4), vec(1, 0)).item() == 3.0

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            masked_distance(vec(1, 2), vec(1, 2, 3), vec(1, 1))

    @given(
        st.lists(st.floats(-5, 5), min_size=4, max_size=4),
        st.lists(st.floats(-5, 5), min_size=4, max_size=4),
        st.lists(st.floats(0, 3), min_size=4, max_size=4),
    )
    def test_symmetric_exactly(self, a, b, m):
        d1 = masked_distance(Tensor(a), Tensor(b), Tensor(m)).item()
        d2 = masked_distance(Tensor(b), Tensor(a), Tensor(m)).item()
        assert d1 == d2

    @given(
        st.lists(st.floats(-3, 3), min_size=3, max_size=3),
        st.lists(st.floats(-3, 3), min_size=3, max_size=3),
        st.lists(st.floats(-3, 3), min_size=3, max_size=3),
        st.lists(st.floats(0, 2), min_size=3, max_size=3),
    )
    def test_triangle_inequality(self, a, b, c, m):
        a, b, c, m = (Tensor(v) for v in (a, b, c, m))
        d_ab = masked_distance(a, b, m).item()
        d_ac = masked_distance(a, c, m).item()
        d_cb = masked_distance(c, b, m).item()
        assert d_ab <= d_ac + d_cb + 1e-12


class TestTripletLosses:
    def test_margin_satisfied(self):
        # D(a, close) = 1, D(a, far) = 3.
        loss = triplet_loss_standard(vec(0, 0), vec(1, 0), vec(3, 0), h=0.2)
        assert loss.item() == 0.0

    def test_violation_plus_margin(self):
        loss = triplet_loss_standard(vec(0, 0), vec(3, 0), vec(1, 0), h=0.2)
        assert loss.item() == pytest.approx(2.2, abs=1e-15)

    def test_degenerate_all_equal_gives_margin(self):
        loss = triplet_loss_standard(vec(1, 1), vec(1, 1), vec(1, 1), h=0.2)
        assert loss.item() == pytest.approx(0.2)

    @given(
        st.lists(st.floats(-4, 4), min_size=3, max_size=3),
        st.lists(st.floats(-4, 4), min_size=3, max_size=3),
        st.lists(st.floats(-4, 4), min_size=3, max_size=3),
    )
    def test_all_ones_mask_reduces_to_standard(self, a, c, f):
        ya, yc, yf = Tensor(a), Tensor(c), Tensor(f)
        ones = Tensor([1.0, 1.0, 1.0])
        assert (
            triplet_loss_masked(ya, yc, yf, ones, 0.2).item()
            == triplet_loss_standard(ya, yc, yf, 0.2).item()
        )

    def test_all_zero_mask_gives_margin(self):
        loss = triplet_loss_masked(vec(1, 2), vec(5, 5), vec(0, 0), vec(0, 0), h=0.1)
        assert loss.item() == pytest.approx(0.1)

    def test_hand_example_masked(self):
        # Masked close distance 1, far distance 2: hinge clamps to zero.
        loss = triplet_loss_masked(vec(1, 0, 0), vec(0, 1, 0), vec(0, 0, 2), vec(0, 1, 1), h=0.1)
        assert loss.item() == 0.0

    def test_hand_example_masked_nonzero(self):
        # Masked distances: close 3, far 1 -> 3 - 1 + 0.5.
        loss = triplet_loss_masked(vec(5, 0, 0), vec(0, 0, 3), vec(0, 1, 0), vec(0, 1, 1), h=0.5)
        assert loss.item() == pytest.approx(2.5, abs=1e-15)


class TestRegularizers:
    def test_embedding_loss_zero(self):
        assert embedding_loss(Tensor(np.zeros((3, 4)))).item() == 0.0

    def test_embedding_loss_single_row(self):
        assert embedding_loss(Tensor([[3.0, 4.0]])).item() == 25.0

    def test_embedding_loss_mean_convention(self):
        assert embedding_loss(Tensor([[1.0, 0.0], [0.0, 2.0]])).item() == 2.5

    def test_mask_loss_all_nonpositive(self):
        bank = MaskBank(np.array([[-1.0, 0.0], [-2.0, -0.5]]), trainable=True)
        assert mask_loss(bank).item() == 0.0

    def test_mask_loss_hand_example(self):
        bank = MaskBank(np.array([[1.0, 0.5], [-2.0, 0.5]]), trainable=True)
        assert mask_loss(bank).item() == 2.0

    def test_mask_loss_strictly_decreases_with_entries(self):
        beta = np.array([[1.0, 0.5], [-2.0, 0.5]])
        before = mask_loss(MaskBank(beta, True)).item()
        beta[0, 0] = 0.4
        assert mask_loss(MaskBank(beta, True)).item() < before


def small_batch(rng, n=3, dim=6, n_c=2):
    xs = [Tensor(rng.normal(size=dim)) for _ in range(3 * n)]
    return [(xs[3 * i], xs[3 * i + 1], xs[3 * i + 2], int(rng.integers(n_c))) for i in range(n)]


class TestCsnLoss:
    def test_degenerates_to_mean_standard_loss(self, rng):
        net = EmbeddingNet([6, 8, 5], 4, seed=2)
        ones = MaskBank(np.ones((4, 2)), trainable=False)
        cfg = LossConfig(margin_h=0.2, lambda1=0.0, lambda2=0.0)
        batch = small_batch(rng)
        joint = csn_loss(net, ones, batch, cfg).item()
        x = Tensor(np.stack([t.data for trip in batch for t in trip[:3]]))
        y = embed(net, x).data
        manual = np.mean(
            [
                triplet_loss_standard(Tensor(y[3 * i]), Tensor(y[3 * i + 1]), Tensor(y[3 * i + 2]), 0.2).item()
                for i in range(len(batch))
            ]
        )
        assert joint == pytest.approx(manual, abs=1e-12)

    def test_zero_weight_network_loss_is_margin(self, rng):
        net = zero_weight_net(input_dim=6, d=4)
        ones = MaskBank(np.ones((4, 2)), trainable=False)
        cfg = LossConfig(margin_h=0.2, lambda1=0.0, lambda2=0.0)
        assert csn_loss(net, ones, small_batch(rng), cfg).item() == pytest.approx(0.2)

    def test_matches_straight_line_recomputation(self):
        rng = np.random.default_rng(40)
        net = EmbeddingNet([6, 8, 5], 4, seed=8)
        bank = MaskBank(rng.normal(0.5, 0.5, size=(4, 2)), trainable=True)
        cfg = LossConfig(margin_h=0.2, lambda1=5e-3, lambda2=5e-4)
        batch = small_batch(rng)
        got = csn_loss(net, bank, batch, cfg).item()
        want = reference_csn_loss(net, bank, batch, cfg)
        assert got == pytest.approx(want, rel=1e-12)

    def test_empty_batch_rejected(self):
        net = EmbeddingNet([4, 3], 2, seed=0)
        bank = MaskBank(np.ones((2, 1)), trainable=False)
        with pytest.raises(ContractError):
            csn_loss(net, bank, [], LossConfig())

    def test_bad_condition_rejected(self, rng):
        net = EmbeddingNet([6, 3], 2, seed=0)
        bank = MaskBank(np.ones((2, 2)), trainable=False)
        batch = [(Tensor(rng.normal(size=6)), Tensor(rng.normal(size=6)), Tensor(rng.normal(size=6)), 5)]
        with pytest.raises(IndexError):
            csn_loss(net, bank, batch, LossConfig())

    def test_full_loss_gradient_check(self):
        rng = np.random.default_rng(77)
        net = EmbeddingNet([5, 6, 4], 4, seed=5)
        bank = MaskBank(rng.normal(0.6, 0.4, size=(4, 2)), trainable=True)
        cfg = LossConfig(margin_h=0.35, lambda1=5e-3, lambda2=5e-4)
        batch = small_batch(rng, dim=5)
        err = grad_check(lambda: csn_loss(net, bank, batch, cfg), net.params() + [bank.beta], eps=1e-6)
        assert err < 1e-4


class TestSubspaceLocality:
    def _disjoint_bank(self, d=8, n_c=2):
        beta = np.full((d, n_c), -1.0)
        beta[: d // 2, 0] = 1.0
        beta[d // 2 :, 1] = 1.0
        return MaskBank(beta, trainable=False)

    def test_projection_gradients_outside_support_exactly_zero(self, rng):
        net = EmbeddingNet([6, 8, 5], 8, seed=9)
        bank = self._disjoint_bank()
        cfg = LossConfig(margin_h=0.3, lambda1=0.0, lambda2=0.0)
        batch = [t[:3] + (0,) for t in small_batch(rng, n=4)]
        zero_grads(net.params() + [bank.beta])
        backward(csn_loss(net, bank, batch, cfg))
        grad_rows = net.projection.grad
        assert np.array_equal(grad_rows[4:], np.zeros((4, 5)))
        assert np.abs(grad_rows[:4]).sum() > 0.0

    def test_per_condition_loss_invariant_outside_support(self, rng):
        # Changing gated-off embedding coordinates cannot move the loss.
        y = rng.normal(size=(3, 8))
        m = np.array([1.0] * 4 + [0.0] * 4)
        base = triplet_loss_masked(Tensor(y[0]), Tensor(y[1]), Tensor(y[2]), Tensor(m), 0.2).item()
        y2 = y.copy()
        y2[:, 4:] += rng.normal(size=(3, 4)) * 100.0
        moved = triplet_loss_masked(Tensor(y2[0]), Tensor(y2[1]), Tensor(y2[2]), Tensor(m), 0.2).item()
        assert base == moved


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        nets = [EmbeddingNet([6, 8, 5], 4, seed=i) for i in range(2)]
        bank = MaskBank(rng.normal(size=(4, 3)), trainable=True)
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, nets, bank, "specialist_set", extra={"conditions": ["a", "b", "c"]})
        loaded_nets, loaded_bank, meta = load_checkpoint(path)
        assert meta["variant"] == "specialist_set"
        assert meta["extra"]["conditions"] == ["a", "b", "c"]
        assert loaded_bank.trainable is True
        assert np.array_equal(loaded_bank.beta.data, bank.beta.data)
        for orig, back in zip(nets, loaded_nets):
            for p, q in zip(orig.params(), back.params()):
                assert np.array_equal(p.data, q.data)

    def test_resave_is_byte_identical(self, tmp_path):
        net = EmbeddingNet([4, 3], 2, seed=1)
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_checkpoint(p1, [net], None, "standard")
        nets, bank, meta = load_checkpoint(p1)
        save_checkpoint(p2, nets, bank, meta["variant"], extra=meta["extra"])
        assert p1.read_bytes() == p2.read_bytes()
