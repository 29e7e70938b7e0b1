import numpy as np
import pytest

from skycast.kernels import available_backends, backend_name, lstm_forward, lstm_backward
from skycast.kernels import pure


def random_case(rng, B=4, T=7, C=5, H=6):
    x = rng.normal(size=(B, T, C))
    W = rng.normal(size=(C, 4 * H)) / np.sqrt(C)
    R = rng.normal(size=(H, 4 * H)) / np.sqrt(H)
    b = rng.normal(size=4 * H) * 0.1
    return x, W, R, b


class TestPureForward:
    def test_shapes(self):
        rng = np.random.default_rng(0)
        x, W, R, b = random_case(rng)
        h_seq, c_seq, gates = pure.lstm_forward(x, W, R, b)
        assert h_seq.shape == (4, 7, 6)
        assert c_seq.shape == (4, 7, 6)
        assert gates.shape == (4, 7, 24)

    def test_single_step_matches_hand_math(self):
        # T=1 from zero state: every gate reduces to closed-form scalars.
        rng = np.random.default_rng(1)
        x, W, R, b = random_case(rng, B=2, T=1, C=3, H=2)
        h_seq, c_seq, gates = pure.lstm_forward(x, W, R, b)
        a = x[:, 0, :] @ W + b  # h_prev = 0 so R drops out
        H = 2

        def sig(z):
            return 1.0 / (1.0 + np.exp(-z))

        i, f = sig(a[:, :H]), sig(a[:, H : 2 * H])
        g, o = np.tanh(a[:, 2 * H : 3 * H]), sig(a[:, 3 * H :])
        c = i * g
        np.testing.assert_allclose(c_seq[:, 0], c, rtol=1e-14)
        np.testing.assert_allclose(h_seq[:, 0], o * np.tanh(c), rtol=1e-14)

    def test_saturated_forget_gate_preserves_cell(self):
        # Huge forget bias, tiny input gate: cell state barely moves.
        rng = np.random.default_rng(2)
        x, W, R, b = random_case(rng, B=1, T=10, C=2, H=3)
        b = b.copy()
        H = 3
        b[:H] = -50.0     # input gate shut
        b[H : 2 * H] = 50.0  # forget gate open
        _, c_seq, _ = pure.lstm_forward(x, W, R, b)
        np.testing.assert_allclose(c_seq[0, -1], c_seq[0, 0], atol=1e-12)

    def test_gates_bounded(self):
        rng = np.random.default_rng(3)
        x, W, R, b = random_case(rng, B=3, T=5, C=4, H=4)
        _, _, gates = pure.lstm_forward(x * 10, W * 10, R, b)
        H = 4
        sig_part = np.concatenate([gates[..., : 2 * H], gates[..., 3 * H :]], axis=-1)
        assert np.all(sig_part >= 0) and np.all(sig_part <= 1)
        assert np.all(np.abs(gates[..., 2 * H : 3 * H]) <= 1)


class TestPureBackwardAgainstFiniteDifferences:
    """The scan gradient checked against central differences.

    This is the independent oracle for the backward pass: perturb every
    parameter (and a sample of inputs), difference a scalar loss built
    from the final hidden state, and compare.
    """

    @staticmethod
    def loss_and_grads(x, W, R, b, proj):
        h_seq, c_seq, gates = pure.lstm_forward(x, W, R, b)
        loss = float(np.sum(h_seq[:, -1, :] * proj))
        dh_last = np.broadcast_to(proj, h_seq[:, -1, :].shape).copy()
        dx, dW, dR, db = pure.lstm_backward(x, W, R, gates, c_seq, h_seq, dh_last)
        return loss, dx, dW, dR, db

    @pytest.mark.parametrize("B,T,C,H", [(2, 4, 3, 5), (1, 1, 2, 3), (3, 8, 1, 2)])
    def test_parameter_gradients(self, B, T, C, H):
        rng = np.random.default_rng(42)
        x, W, R, b = random_case(rng, B=B, T=T, C=C, H=H)
        proj = rng.normal(size=H)
        _, dx, dW, dR, db = self.loss_and_grads(x, W, R, b, proj)
        eps = 1e-6

        def fd(arr, idx):
            plus = arr.copy()
            minus = arr.copy()
            plus[idx] += eps
            minus[idx] -= eps
            args = {"x": x, "W": W, "R": R, "b": b}
            name = [k for k, v in args.items() if v is arr][0]
            lp = self.loss_and_grads(**{**args, name: plus}, proj=proj)[0]
            lm = self.loss_and_grads(**{**args, name: minus}, proj=proj)[0]
            return (lp - lm) / (2 * eps)

        for arr, grad in ((W, dW), (R, dR), (b, db), (x, dx)):
            flat = arr.reshape(-1)
            n_checks = min(flat.size, 25)
            for k in rng.choice(flat.size, n_checks, replace=False):
                idx = np.unravel_index(k, arr.shape)
                approx = fd(arr, idx)
                got = grad[idx]
                denom = max(abs(approx), abs(got), 1e-8)
                assert abs(approx - got) / denom < 1e-6, (arr.shape, idx)


@pytest.mark.skipif(
    "fast" not in available_backends(), reason="compiled backend not built"
)
class TestBackendAgreement:
    def test_forward_matches(self):
        fast = available_backends()["fast"]
        rng = np.random.default_rng(10)
        for B, T, C, H in [(1, 1, 1, 1), (2, 5, 3, 4), (8, 12, 6, 16), (3, 2, 10, 1)]:
            x, W, R, b = random_case(rng, B=B, T=T, C=C, H=H)
            ref = pure.lstm_forward(x, W, R, b)
            got = fast.lstm_forward(x, W, R, b)
            for a, e in zip(got, ref):
                np.testing.assert_allclose(a, e, rtol=1e-12, atol=1e-14)

    def test_backward_matches(self):
        fast = available_backends()["fast"]
        rng = np.random.default_rng(11)
        for B, T, C, H in [(1, 1, 1, 1), (2, 5, 3, 4), (8, 12, 6, 16)]:
            x, W, R, b = random_case(rng, B=B, T=T, C=C, H=H)
            h_seq, c_seq, gates = pure.lstm_forward(x, W, R, b)
            dh_last = rng.normal(size=(B, H))
            ref = pure.lstm_backward(x, W, R, gates, c_seq, h_seq, dh_last)
            got = fast.lstm_backward(x, W, R, gates, c_seq, h_seq, dh_last)
            for a, e in zip(got, ref):
                np.testing.assert_allclose(a, e, rtol=1e-12, atol=1e-14)

    def test_noncontiguous_inputs_accepted(self):
        fast = available_backends()["fast"]
        rng = np.random.default_rng(12)
        x, W, R, b = random_case(rng, B=4, T=6, C=4, H=3)
        x_strided = np.asfortranarray(x)  # worst-case memory order
        ref = pure.lstm_forward(x, W, R, b)
        got = fast.lstm_forward(x_strided, W, R, b)
        for a, e in zip(got, ref):
            np.testing.assert_allclose(a, e, rtol=1e-12, atol=1e-14)


def test_selection_reports_a_real_backend():
    assert backend_name() in available_backends()
    mod = available_backends()[backend_name()]
    assert lstm_forward is mod.lstm_forward
    assert lstm_backward is mod.lstm_backward
