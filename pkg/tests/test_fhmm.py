import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from motionhmm import fhmm, hmm
from motionhmm.fhmm import FhmmParams
from motionhmm.hmm import ModelConfig, Topology

from _oracles import brute_fhmm_loglik, emission_table, path_log_probs, random_hmm

LR1 = Topology("left_to_right", 1)


def random_fhmm(rng, K=3, M=2, D=2, topology=None):
    return FhmmParams(tuple(random_hmm(rng, K, D, topology) for _ in range(M)))


class TestCombinedEmission:
    def test_nine_weighted_sums(self):
        model = random_fhmm(np.random.default_rng(0), K=3, M=2)
        c1, c2 = model.chains
        seen = set()
        for i, j in itertools.product(range(3), repeat=2):
            mean, var = fhmm.combined_emission(model, (i, j))
            np.testing.assert_array_equal(mean, 0.5 * (c1.means[i] + c2.means[j]))
            np.testing.assert_array_equal(var, 0.25 * (c1.covariances[i] + c2.covariances[j]))
            seen.add((i, j))
        assert len(seen) == 9

    def test_vectorized_matches_per_state(self):
        model = random_fhmm(np.random.default_rng(1), K=3, M=3)
        means, var = fhmm.combined_emissions(model)
        for n, js in enumerate(fhmm.joint_states(3, 3)):
            m, v = fhmm.combined_emission(model, js)
            np.testing.assert_allclose(means[n], m, rtol=1e-15)
            np.testing.assert_allclose(var[n], v, rtol=1e-15)

    def test_single_chain_unchanged(self):
        model = random_fhmm(np.random.default_rng(2), M=1)
        mean, var = fhmm.combined_emission(model, (2,))
        np.testing.assert_array_equal(mean, model.chains[0].means[2])
        np.testing.assert_array_equal(var, model.chains[0].covariances[2])

    def test_joint_state_order(self):
        np.testing.assert_array_equal(fhmm.joint_states(2, 2), [[0, 0], [0, 1], [1, 0], [1, 1]])
        assert len(fhmm.joint_states(15, 2)) == 225

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 10**6))
    def test_covariance_floor_carries_over(self, K, M, seed):
        rng = np.random.default_rng(seed)
        chains = []
        for _ in range(M):
            c = random_hmm(rng, K, 2)
            chains.append(hmm.HmmParams(c.pi, c.A, c.means, np.full_like(c.covariances, 1e-4), c.mask, c.topology))
        _, var = fhmm.combined_emissions(FhmmParams(tuple(chains)))
        W = 1.0 / M
        assert np.all(var >= W * W * M * 1e-4 * (1 - 1e-12))

    def test_bad_index(self):
        model = random_fhmm(np.random.default_rng(0))
        with pytest.raises(IndexError):
            fhmm.combined_emission(model, (0, 3))


class TestFlatten:
    def test_single_chain_identity(self):
        model = random_fhmm(np.random.default_rng(3), M=1)
        flat = fhmm.flatten(model)
        c = model.chains[0]
        for f in ("pi", "A", "means", "covariances", "mask"):
            np.testing.assert_array_equal(getattr(flat, f), getattr(c, f))

    def test_kron_matches_entrywise_products(self):
        model = random_fhmm(np.random.default_rng(4), K=2, M=3)
        flat = fhmm.flatten(model)
        joint = list(itertools.product(range(2), repeat=3))
        for a, s in enumerate(joint):
            assert flat.pi[a] == pytest.approx(np.prod([c.pi[k] for c, k in zip(model.chains, s)]))
            for b, r in enumerate(joint):
                expected = np.prod([c.A[i, j] for c, i, j in zip(model.chains, s, r)])
                assert flat.A[a, b] == pytest.approx(expected, rel=1e-14)

    def test_size(self):
        rng = np.random.default_rng(5)
        model = random_fhmm(rng, K=15, M=2, D=1)
        assert fhmm.flatten(model).K == 225

    def test_guard(self):
        chain = random_hmm(np.random.default_rng(0), 11, 1)
        with pytest.raises(ValueError, match="exceeds"):
            fhmm.log_likelihood(FhmmParams((chain,) * 6), np.zeros((2, 1)))


class TestLikelihood:
    def test_single_chain_matches_hmm(self):
        rng = np.random.default_rng(6)
        model = random_fhmm(rng, M=1)
        x = rng.normal(size=(7, 2))
        assert fhmm.log_likelihood(model, x) == pytest.approx(hmm.log_likelihood(model.chains[0], x), abs=1e-10)

    def test_matches_flattened_and_brute_force(self):
        rng = np.random.default_rng(7)
        for _ in range(3):
            model = random_fhmm(rng, K=3, M=2)
            x = rng.normal(size=(4, 2))
            ll = fhmm.log_likelihood(model, x)
            assert ll == pytest.approx(hmm.log_likelihood(fhmm.flatten(model), x), abs=1e-10)
            assert ll == pytest.approx(brute_fhmm_loglik(model.chains, x), abs=1e-8)

    def test_left_to_right_chains(self):
        rng = np.random.default_rng(8)
        model = random_fhmm(rng, K=3, M=2, topology=LR1)
        x = rng.normal(size=(4, 2))
        assert fhmm.log_likelihood(model, x) == pytest.approx(brute_fhmm_loglik(model.chains, x), abs=1e-8)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 5), st.integers(0, 10**6))
    def test_flatten_consistency(self, K, M, T, seed):
        rng = np.random.default_rng(seed)
        model = random_fhmm(rng, K=K, M=M, D=2)
        x = rng.normal(size=(T, 2))
        assert fhmm.log_likelihood(model, x) == pytest.approx(
            hmm.log_likelihood(fhmm.flatten(model), x), abs=1e-10
        )


class TestContribution:
    def test_single_state_chain(self):
        chain = random_hmm(np.random.default_rng(0), 1, 2)
        c = fhmm.chain_contribution(chain, np.random.default_rng(1).normal(size=(5, 2)))
        np.testing.assert_allclose(c, np.tile(chain.means[0], (5, 1)))

    def test_matches_path_enumeration(self):
        rng = np.random.default_rng(2)
        chain = random_hmm(rng, 2, 2)
        x = rng.normal(size=(3, 2))
        paths, scores = path_log_probs(chain.pi, chain.A, emission_table(chain.means, chain.covariances, x))
        w = np.exp(scores - scores.max())
        w /= w.sum()
        expected = np.zeros((3, 2))
        for p, wp in zip(paths, w):
            expected += wp * chain.means[list(p)]
        np.testing.assert_allclose(fhmm.chain_contribution(chain, x), expected, atol=1e-10)


class TestResidual:
    def test_no_prior_chains(self):
        o = np.arange(6.0).reshape(3, 2)
        np.testing.assert_allclose(fhmm.residual(o, [], 0.5), 2 * o)

    def test_exact_reconstruction_is_zero(self):
        o = np.random.default_rng(0).normal(size=(4, 2))
        np.testing.assert_allclose(fhmm.residual(o, [o], 1.0), 0.0)

    def test_as_printed(self):
        o = np.array([[4.0]])
        c1, c2 = np.array([[2.0]]), np.array([[6.0]])
        # (1/W) * (o - W c1 - W c2) with W = 1/3
        np.testing.assert_allclose(fhmm.residual(o, [c1, c2], 1 / 3), [[3 * (4 - 2 / 3 - 2)]])


class TestSequentialTraining:
    def _data(self):
        gen = random_hmm(np.random.default_rng(9), 3, 2, LR1)
        return [hmm.sample(gen, 30, seed=s) for s in range(4)]

    def test_single_chain_is_plain_hmm(self):
        seqs = self._data()
        cfg = ModelConfig(n_states=3)
        f = fhmm.sequential_train(seqs, 1, cfg, seed=12)
        h = hmm.fit(seqs, cfg, seed=12)
        assert json.dumps(f.chains[0].to_dict()) == json.dumps(h.to_dict())

    def test_two_chains(self):
        seqs = self._data()
        model = fhmm.sequential_train(seqs, 2, ModelConfig(n_states=3, model="fhmm", chains=2), seed=0)
        assert model.M == 2 and model.K == 3 and model.W == 0.5
        assert np.isfinite(fhmm.log_likelihood(model, seqs[0]))

    def test_serialization_roundtrip(self):
        model = random_fhmm(np.random.default_rng(3))
        d = json.loads(json.dumps(model.to_dict()))
        assert set(d) == {"M", "W", "chains"}
        back = FhmmParams.from_dict(d)
        x = np.zeros((3, 2))
        assert fhmm.log_likelihood(back, x) == fhmm.log_likelihood(model, x)

    def test_chains_must_agree(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            FhmmParams((random_hmm(rng, 2, 2), random_hmm(rng, 3, 2)))
