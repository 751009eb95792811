"""Unlearning losses: exact values, gradient identities, finite differences.

Loss conventions (all minimized):
  nll  = -log p_y
  ll   = +log p_y            (minimizing drives p_y down)
  nlul = -log(1 - p_y)
  it   = KL(softmax(h) || softmax(teacher_h))
  npo  = (2/beta) softplus(beta (L_theta - L_base)) per sequence,
         L = sequence log-probability
"""

import numpy as np
import pytest
from scipy.special import expit

from conftest import central_difference_gradient, relative_error
from mtunlearn import losses as L
from mtunlearn import model as M


def bigram_spec(V=5):
    return M.ModelSpec(M.BIGRAM, V)


def mlp_spec():
    return M.ModelSpec(M.MLP, 5, context_len=2, hidden_dim=4)


def random_rows(rng, n=8, V=5, scale=2.0):
    H = rng.standard_normal((n, V)) * scale
    y = rng.integers(0, V, n)
    return H, y


def random_batch(rng, spec, n=10):
    ctx = rng.integers(0, spec.vocab_size, (n, spec.context_len))
    nxt = rng.integers(0, spec.vocab_size, n)
    return M.TokenDataset(ctx, nxt, "forget")


class TestRowIdentities:
    def test_ll_is_exact_negation_of_nll(self):
        """ll and nll pick the same log-probabilities, so the negation is
        bitwise, not approximate."""
        rng = np.random.default_rng(40)
        for _ in range(20):
            H, y = random_rows(rng)
            assert np.array_equal(L.ll_value_rows(H, y), -L.nll_value_rows(H, y))
            assert np.array_equal(L.ll_grad_rows(H, y), -L.nll_grad_rows(H, y))

    def test_nlul_gradient_weight_identity(self):
        """grad nlul = (p_y / (1 - p_y)) * grad ll, row by row."""
        rng = np.random.default_rng(41)
        for _ in range(20):
            H, y = random_rows(rng)
            P = M.softmax_rows(H)
            p_y = P[np.arange(len(y)), y]
            w = p_y / (1.0 - p_y)
            expected = w[:, None] * L.ll_grad_rows(H, y)
            err = relative_error(L.nlul_grad_rows(H, y), expected)
            assert err <= 1e-10

    def test_it_uniform_is_log_v_minus_entropy(self):
        """Against a uniform teacher, KL(p || u) = log V - H(p)."""
        rng = np.random.default_rng(42)
        V = 5
        for _ in range(20):
            H, _ = random_rows(rng, V=V)
            P = M.softmax_rows(H)
            entropy = -np.sum(P * np.log(P), axis=1)
            expected = np.log(V) - entropy
            uniform = np.zeros_like(H)
            err = np.max(np.abs(L.it_value_rows(H, uniform) - expected))
            assert err <= 1e-10

    def test_it_value_zero_at_teacher(self):
        rng = np.random.default_rng(43)
        H, _ = random_rows(rng)
        np.testing.assert_allclose(L.it_value_rows(H, H.copy()), 0.0, atol=1e-14)

    def test_single_row_wrappers_match_batch_rows(self):
        rng = np.random.default_rng(44)
        H, y = random_rows(rng, n=1)
        h, yy = H[0], int(y[0])
        assert L.ll_value(h, yy) == pytest.approx(L.ll_value_rows(H, y)[0])
        assert L.nlul_value(h, yy) == pytest.approx(L.nlul_value_rows(H, y)[0])
        np.testing.assert_allclose(L.nlul_grad(h, yy), L.nlul_grad_rows(H, y)[0])
        t = rng.standard_normal(len(h))
        assert L.it_value(h, t) == pytest.approx(
            L.it_value_rows(H, t[None, :])[0])


class TestNluLStability:
    def test_clamp_keeps_saturated_rows_finite(self):
        """At p_y ~ 1 the raw -log(1 - p_y) overflows; the clamp caps the
        complement probability at clamp_eps from below."""
        h = np.array([80.0, 0.0, 0.0, 0.0])
        val = L.nlul_value(h, 0)
        g = L.nlul_grad(h, 0)
        assert np.isfinite(val)
        assert np.all(np.isfinite(g))
        assert val == pytest.approx(-np.log(1e-12), rel=1e-6)

    def test_moderate_rows_match_naive_formula(self):
        rng = np.random.default_rng(45)
        H, y = random_rows(rng)
        P = M.softmax_rows(H)
        p_y = P[np.arange(len(y)), y]
        np.testing.assert_allclose(L.nlul_value_rows(H, y), -np.log1p(-p_y),
                                   rtol=1e-10)


class TestNpo:
    def test_value_and_weight_at_base_model(self):
        """At theta = base: value = (2/beta) log 2, weight = 1/2."""
        rng = np.random.default_rng(46)
        spec = bigram_spec()
        theta = rng.standard_normal(25)
        s = [0, 3, 1, 4]
        beta = 0.7
        assert L.npo_value(spec, s, theta, theta, beta) == pytest.approx(
            (2.0 / beta) * np.log(2.0), rel=1e-12)
        assert L.npo_weight(spec, s, theta, theta, beta) == pytest.approx(0.5)

    def test_sequence_weight_identity(self):
        """grad npo = 2 sigmoid(beta (L_theta - L_base)) grad L_theta,
        checked against the finite-difference gradient of npo_value."""
        rng = np.random.default_rng(47)
        spec = bigram_spec(4)
        beta = 0.5
        for _ in range(20):
            theta = rng.standard_normal(16)
            base = rng.standard_normal(16)
            s = list(rng.integers(0, 4, 5))
            w = expit(beta * (M.sequence_logprob(spec, theta, s)
                              - M.sequence_logprob(spec, base, s)))
            identity = 2.0 * w * M.grad_sequence_logprob(spec, theta, s)
            np.testing.assert_allclose(L.npo_grad(spec, s, theta, base, beta),
                                       identity, rtol=1e-12)
            fd = central_difference_gradient(
                lambda th: L.npo_value(spec, s, th, base, beta), theta)
            assert relative_error(identity, fd) <= 1e-6


class TestBatchInterface:
    @pytest.mark.parametrize("tag", ["nll", "ll", "nlul", "it"])
    def test_batch_grad_matches_finite_differences(self, tag):
        rng = np.random.default_rng(48)
        kind = L.LossKind(tag)
        for spec in (bigram_spec(), mlp_spec()):
            theta = rng.standard_normal(M.param_count(spec)) * 0.5
            batch = random_batch(rng, spec)
            g = L.batch_grad(kind, spec, theta, batch)
            fd = central_difference_gradient(
                lambda th: L.batch_loss(kind, spec, th, batch), theta)
            assert relative_error(g, fd) < 1e-6

    def test_npo_batch_matches_finite_differences(self):
        rng = np.random.default_rng(49)
        spec = bigram_spec(4)
        kind = L.LossKind("npo", beta=0.3)
        theta = rng.standard_normal(16) * 0.5
        base = rng.standard_normal(16) * 0.5
        batch = M.dataset_from_sequences([[0, 1, 2, 3], [3, 2, 1]], 1)
        g = L.batch_grad(kind, spec, theta, batch, base_theta=base)
        fd = central_difference_gradient(
            lambda th: L.batch_loss(kind, spec, th, batch, base_theta=base),
            theta)
        assert relative_error(g, fd) < 1e-6

    def test_nll_of_flat_logits_is_log_vocab(self):
        spec = bigram_spec(8)
        theta = np.zeros(64)
        batch = random_batch(np.random.default_rng(50), spec)
        assert L.batch_loss(L.LossKind("nll"), spec, theta, batch) == \
            pytest.approx(np.log(8.0), rel=1e-12)

    def test_empty_batch_rejected(self):
        spec = bigram_spec()
        empty = M.TokenDataset(np.zeros((0, 1), dtype=int),
                               np.zeros(0, dtype=int))
        with pytest.raises(ValueError, match="empty"):
            L.batch_loss(L.LossKind("nll"), spec, np.zeros(25), empty)

    def test_npo_requires_base_model(self):
        spec = bigram_spec()
        batch = M.dataset_from_sequences([[0, 1, 2]], 1)
        with pytest.raises(ValueError, match="base_theta"):
            L.batch_loss(L.LossKind("npo"), spec, np.zeros(25), batch)

    def test_npo_requires_sequences(self):
        spec = bigram_spec()
        rows_only = random_batch(np.random.default_rng(51), spec)
        with pytest.raises(ValueError, match="sequences"):
            L.batch_grad(L.LossKind("npo"), spec, np.zeros(25), rows_only,
                         base_theta=np.zeros(25))

    def test_unknown_tag_rejected(self):
        with pytest.raises(ValueError, match="tag"):
            L.LossKind("elbo")


class TestTeacher:
    def test_default_teacher_is_uniform(self):
        t = L.TeacherLogits()
        H = t.batch(np.array([[0], [1]]), 5)
        np.testing.assert_array_equal(H, np.zeros((2, 5)))

    def test_model_teacher_serves_its_logits(self):
        rng = np.random.default_rng(52)
        spec = bigram_spec(4)
        theta_t = rng.standard_normal(16)
        teacher = L.TeacherLogits(spec, theta_t)
        ctx = np.array([[0], [2], [3]])
        np.testing.assert_allclose(teacher.batch(ctx, 4),
                                   M.batch_logits(spec, theta_t, ctx))

    def test_it_loss_against_model_teacher_is_kl(self):
        rng = np.random.default_rng(53)
        spec = bigram_spec(4)
        theta = rng.standard_normal(16)
        theta_t = rng.standard_normal(16)
        kind = L.LossKind("it", teacher=L.TeacherLogits(spec, theta_t))
        batch = random_batch(rng, spec, n=6)
        P = M.softmax_rows(M.batch_logits(spec, theta, batch.contexts))
        Q = M.softmax_rows(M.batch_logits(spec, theta_t, batch.contexts))
        manual = float(np.mean(np.sum(P * (np.log(P) - np.log(Q)), axis=1)))
        assert L.batch_loss(kind, spec, theta, batch) == pytest.approx(
            manual, rel=1e-10)
