import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cirnas import tensor as T
from cirnas import controller as C
from cirnas.tensor import Tensor
from cirnas.controller import ConsensusState, ControllerNet

from gradcheck import assert_grad_matches


def fresh_state(n=4, c=4, alpha=0.9, gamma=0.9):
    return ConsensusState.fresh(n, c, alpha, gamma)


class TestControllerNet:
    def test_identical_tasks_identical_rows(self):
        net = ControllerNet(3, 5, 8, seed=0)
        t = Tensor(np.tile([[0.2, 0.5, 0.9]], (4, 1)).astype(np.float32))
        zs = net.predict_zs(t).data
        for row in zs[1:]:
            np.testing.assert_array_equal(row, zs[0])

    def test_zero_head_weights_gives_bias(self):
        net = ControllerNet(3, 2, 4, seed=1)
        net.head[0].data[:] = 0.0
        net.head[1].data[:] = 0.7
        zs = net.predict_zs(Tensor([[0.1, 0.2, 0.3]])).data
        np.testing.assert_allclose(zs, 0.7, atol=1e-7)

    def test_fresh_net_starts_fully_active(self):
        net = ControllerNet(3, 4, 8, seed=2)
        zs = net.predict_zs(Tensor([[0.5, 0.5, 0.5]])).data
        assert np.all(C.gate_forward(zs) >= 0)  # shape sanity
        # positive head bias keeps most gates on at init
        assert C.gate_forward(zs).mean() > 0.9

    def test_out_of_range_task(self):
        net = ControllerNet(3, 2, 4, seed=3)
        with pytest.raises(ValueError):
            net.predict_zs(Tensor([[1.2, 0.0, 0.0]]))

    def test_jacobian_wrt_task_matches_finite_differences(self):
        net = ControllerNet(3, 2, 4, hidden=8, seed=4, dtype=np.float64)
        t = Tensor(np.array([[0.3, 0.6, 0.4]]), requires_grad=True,
                   dtype=np.float64)
        probe = Tensor(np.random.default_rng(4).normal(size=(1, 8)))

        def loss():
            return T.mean(T.mul(net.predict_zs(t), probe))

        assert_grad_matches(loss, [t])

    def test_gradient_reaches_all_weights(self):
        net = ControllerNet(3, 2, 4, hidden=8, seed=5, dtype=np.float64)
        t = Tensor(np.array([[0.3, 0.6, 0.4]]))
        zs = net.predict_zs(t)
        T.mean(T.mul(zs, zs)).backward()
        for p in net.parameters():
            assert p.grad is not None

    def test_flops_formula(self):
        net = ControllerNet(3, 5, 4, hidden=8)
        assert net.flops() == 2 * (3 * 8 + 8 * 8 + 8 * 5 * 4)


class TestSiteGates:
    def test_shapes_and_values(self):
        zs = Tensor(np.array([[1.0, -1.0, 0.5, -0.5, 2.0, -2.0]]),
                    requires_grad=True)
        gates = C.site_gates(zs, 3, 2)
        assert len(gates) == 3
        assert gates[0].shape == (1, 2, 1, 1)
        np.testing.assert_array_equal(gates[0].data.ravel(), [1, 0])
        np.testing.assert_array_equal(gates[1].data.ravel(), [1, 0])
        np.testing.assert_array_equal(gates[2].data.ravel(), [1, 0])

    def test_gradient_routing(self):
        zs = Tensor(np.zeros((2, 6)), requires_grad=True, dtype=np.float64)
        gates = C.site_gates(zs, 3, 2)
        T.tsum(gates[1]).backward()
        # only the middle site's logits receive gradient; sigmoid'(0) = 0.25
        expect = np.zeros((2, 6))
        expect[:, 2:4] = 0.25
        np.testing.assert_allclose(zs.grad, expect)


class TestConsensusEma:
    def test_single_update(self):
        st_ = fresh_state()
        C.update_za(st_, np.ones((2, 4, 4)))
        np.testing.assert_allclose(st_.z_a, 0.9)

    def test_alpha_zero_keeps_state(self):
        st_ = fresh_state(alpha=0.0)
        st_.z_a[:] = 0.3
        C.update_za(st_, np.ones((1, 4, 4)))
        np.testing.assert_allclose(st_.z_a, 0.3)

    def test_two_step_hand_trace(self):
        st_ = fresh_state()
        C.update_za(st_, np.ones((3, 4, 4)))
        C.update_za(st_, -np.ones((3, 4, 4)))
        np.testing.assert_allclose(st_.z_a, 0.1 * 0.9 + 0.9 * (-1.0))

    def test_replay_bit_identical(self):
        rng = np.random.default_rng(7)
        batches = [rng.normal(size=(2, 4, 4)) for _ in range(5)]
        a, b = fresh_state(), fresh_state()
        for batch in batches:
            C.consensus_step(a, batch)
            C.consensus_step(b, batch)
        np.testing.assert_array_equal(a.z_a, b.z_a)
        np.testing.assert_array_equal(a.s, b.s)
        np.testing.assert_array_equal(a.phi, b.phi)

    def test_state_dict_round_trip(self):
        st_ = fresh_state()
        C.consensus_step(st_, np.random.default_rng(8).normal(size=(2, 4, 4)))
        back = ConsensusState.from_dict(st_.to_dict())
        np.testing.assert_array_equal(back.z_a, st_.z_a)
        np.testing.assert_array_equal(back.phi, st_.phi)


class TestAgreement:
    def test_perfect_agreement(self):
        z_a = np.array([[1.0, 1.0, -1.0, -1.0]])
        zs = np.tile(z_a, (3, 1, 1))
        assert C.agreement(zs, z_a, 0, 0.9) == 1

    def test_hand_case(self):
        # consensus active {0,1}; tasks active {0,1} and {0}:
        # LHS = (2 + 1)/2 = 1.5, RHS = 0.9 * 2 = 1.8, strict > fails
        z_a = np.array([[1.0, 1.0, -1.0, -1.0]])
        zs = np.array([[[1.0, 1.0, -1.0, -1.0]],
                       [[1.0, -1.0, -1.0, -1.0]]])
        assert C.agreement(zs, z_a, 0, 0.9) == 0

    def test_all_inactive_consensus(self):
        z_a = np.array([[-1.0, -1.0, -1.0, -1.0]])
        zs = np.ones((2, 1, 4))
        assert C.agreement(zs, z_a, 0, 0.9) == 0

    def test_scale_invariance(self):
        rng = np.random.default_rng(9)
        z_a = rng.normal(size=(2, 8))
        zs = rng.normal(size=(4, 2, 8))
        for n in range(2):
            assert C.agreement(zs, z_a, n, 0.9) \
                == C.agreement(2 * zs, 2 * z_a, n, 0.9)


class TestScoreAndPrefix:
    def test_single_update(self):
        st_ = fresh_state()
        C.update_s(st_, np.ones(4))
        np.testing.assert_allclose(st_.s, 0.9)

    def test_repeated_agreement_monotone_to_one(self):
        st_ = fresh_state()
        prev = st_.s.copy()
        for _ in range(20):
            C.update_s(st_, np.ones(4))
            assert np.all(st_.s >= prev)
            prev = st_.s.copy()
        np.testing.assert_allclose(st_.s, 1.0, atol=1e-6)

    def test_alternating_hand_trace(self):
        st_ = fresh_state(n=1)
        trace = []
        for eta in [1, 0, 1, 0]:
            C.update_s(st_, np.array([eta]))
            trace.append(st_.s[0])
        np.testing.assert_allclose(trace, [0.9, 0.09, 0.909, 0.0909])

    def test_phi_prefix_rule(self):
        phi = C.compute_phi(np.array([0.95, 0.92, 0.8, 0.95]), 0.9)
        np.testing.assert_array_equal(phi, [True, True, False, False])

    def test_phi_degenerate(self):
        np.testing.assert_array_equal(C.compute_phi(np.zeros(3), 0.9),
                                      [False] * 3)
        np.testing.assert_array_equal(C.compute_phi(np.ones(3), 0.9),
                                      [True] * 3)

    @given(st.lists(st.integers(min_value=0, max_value=1),
                    min_size=4, max_size=4))
    @settings(max_examples=40, deadline=None)
    def test_s_stays_in_unit_interval_and_phi_is_prefix(self, etas):
        st_ = fresh_state()
        rng = np.random.default_rng(0)
        for _ in range(5):
            C.consensus_step(st_, rng.normal(size=(2, 4, 4)))
            C.update_s(st_, np.array(etas))
            assert np.all(st_.s >= 0) and np.all(st_.s <= 1)
            phi = C.compute_phi(st_.s, st_.gamma)
            if phi.any():
                first_false = int(np.argmin(phi)) if not phi.all() else len(phi)
                assert phi[:first_false].all()
                assert not phi[first_false:].any()


class TestR2Penalty:
    def test_zero_on_identical_masks(self):
        z_a = np.array([[1.0, -1.0], [1.0, 1.0]])
        zs = Tensor(np.tile(z_a.reshape(1, 4), (3, 1)))
        phi = np.array([True, True])
        assert C.r2_penalty(zs, z_a, phi, 2, 2).item() == 0.0

    def test_first_site_three_channel_difference(self):
        # phi all zero: only site 0 (weight phi_0 == 1) counts
        z_a = np.full((2, 4), -1.0)
        zs_rows = np.full((1, 8), -1.0)
        zs_rows[0, :3] = 1.0  # 3 differing channels at site 0
        penalty = C.r2_penalty(Tensor(zs_rows), z_a,
                               np.array([False, False]), 2, 4)
        assert penalty.item() == pytest.approx(3.0)
        # the same difference moved to site 1 is not counted
        zs_rows2 = np.full((1, 8), -1.0)
        zs_rows2[0, 4:7] = 1.0
        penalty2 = C.r2_penalty(Tensor(zs_rows2), z_a,
                                np.array([False, False]), 2, 4)
        assert penalty2.item() == 0.0

    def test_doubling_tasks_doubles_penalty(self):
        z_a = np.full((2, 4), -1.0)
        row = np.full((1, 8), -1.0)
        row[0, :2] = 1.0
        p1 = C.r2_penalty(Tensor(row), z_a, np.ones(2, dtype=bool), 2, 4)
        p2 = C.r2_penalty(Tensor(np.tile(row, (2, 1))), z_a,
                          np.ones(2, dtype=bool), 2, 4)
        assert p2.item() == pytest.approx(2 * p1.item())

    def test_phi_weight_uses_previous_site(self):
        # difference at site 1 counts iff phi_0 (site index 0) is set
        z_a = np.full((2, 4), -1.0)
        row = np.full((1, 8), -1.0)
        row[0, 4] = 1.0
        on = C.r2_penalty(Tensor(row), z_a, np.array([True, False]), 2, 4)
        off = C.r2_penalty(Tensor(row), z_a, np.array([False, False]), 2, 4)
        assert (on.item(), off.item()) == (1.0, 0.0)

    def test_gradient_is_signed_sigmoid_surrogate(self):
        # d|g(z) - ga|/dz = sigmoid'(z) * (1 - 2 ga) on weighted sites
        z = np.array([[0.5, -0.5, 0.0, 1.0]])
        z_a = np.array([[1.0, -1.0, 1.0, -1.0]])
        zs = Tensor(z, requires_grad=True, dtype=np.float64)
        C.r2_penalty(zs, z_a, np.array([True]), 1, 4).backward()
        sig = 1 / (1 + np.exp(-z))
        expect = sig * (1 - sig) * (1 - 2 * C.gate_forward(z_a).reshape(1, 4))
        np.testing.assert_allclose(zs.grad, expect, rtol=1e-12)

    def test_nonnegative_property(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            zs = Tensor(rng.normal(size=(3, 8)))
            z_a = rng.normal(size=(2, 4))
            phi = rng.integers(0, 2, 2).astype(bool)
            assert C.r2_penalty(zs, z_a, phi, 2, 4).item() >= 0.0
