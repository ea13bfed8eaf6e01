import math

import numpy as np
import pytest
from scipy.special import expit
from scipy.stats import norm

from sgz.diff_core import ParamStore, grad_check
from sgz.entropy_model import (GMM, TOTAL, DiscretePMF, FactorizedPrior, Gaussian, Laplacian,
                               LearnedCDF, bernoulli_pmf, categorical_bits, categorical_pmf,
                               continuous_pmf, factorized_prior_bits, interval_bits, make_family,
                               quantize, uniform_pmf)


def test_pmf_validation():
    with pytest.raises(ValueError):
        DiscretePMF(0, [TOTAL - 1, 0, 1])
    with pytest.raises(ValueError):
        DiscretePMF(0, [5, 5])
    p = DiscretePMF(3, [TOTAL // 2, TOTAL // 2])
    assert (p.lo, p.hi, p.bits(4)) == (3, 4, 1.0)


def test_categorical_examples():
    assert categorical_pmf(np.zeros(1)).freqs.tolist() == [65536]
    assert categorical_pmf(np.zeros(4)).freqs.tolist() == [16384] * 4
    # softmax (0.6, 0.2, 0.2) * 2^16 = 39321.6, 13107.2, 13107.2 -> largest remainder to index 0
    assert categorical_pmf(np.array([math.log(3), 0, 0])).freqs.tolist() == [39322, 13107, 13107]


def test_categorical_argmax_preserved(rng):
    for _ in range(200):
        logits = rng.normal(scale=rng.uniform(0.1, 20), size=int(rng.integers(2, 40)))
        f = categorical_pmf(logits).freqs
        assert f.sum() == TOTAL and f.min() >= 1
        assert int(np.argmax(f)) == int(np.argmax(logits))


def test_quantize_floor_repair():
    f = quantize(np.array([1.0] + [1e-12] * 9))
    assert f.sum() == TOTAL and f.min() == 1 and f[0] == TOTAL - 9


def test_bernoulli_examples():
    assert bernoulli_pmf(0.5).freqs.tolist() == [32768, 32768]
    assert bernoulli_pmf(1e-9).freqs.tolist() == [65535, 1]
    assert bernoulli_pmf(0.75).freqs.tolist() == [16384, 49152]
    assert bernoulli_pmf(1.0).freqs.tolist() == [1, 65535]


def test_uniform_pmf():
    p = uniform_pmf(-2, 5)
    assert p.lo == -2 and len(p) == 8 and set(p.freqs.tolist()) == {8192}


def test_gaussian_center_mass():
    # Phi(0.5) - Phi(-0.5) from the normal CDF
    g = Gaussian()
    dy_row = np.array([[0.0, math.log(math.expm1(1.0 - 1e-3))]])  # sigma = softplus + 1e-3 = 1
    c, _, _ = g.cdf(np.array([[-0.5, 0.5]]), dy_row)
    assert c[0, 1] - c[0, 0] == pytest.approx(norm.cdf(0.5) - norm.cdf(-0.5), abs=1e-12)
    assert c[0, 1] - c[0, 0] == pytest.approx(0.3829, abs=1e-4)
    pmf = continuous_pmf(lambda z: g.cdf(z[None], dy_row)[0][0], -20, 20)
    # lifting the ~30 empty tail bins to frequency 1 moves at most that many units
    assert pmf.freqs[20] / TOTAL == pytest.approx(0.3829, abs=len(pmf) / TOTAL)


def test_laplacian_cdf_matches_closed_form(rng):
    lap = Laplacian()
    dy_row = np.array([[0.3, 0.7]])
    b = np.log1p(np.exp(0.7)) + 1e-3
    z = rng.normal(size=(1, 50)) * 3
    c, s, _ = lap.cdf(z, dy_row)
    ref = np.where(z < 0.3, 0.5 * np.exp((z - 0.3) / b), 1 - 0.5 * np.exp(-(z - 0.3) / b))
    assert np.allclose(c, ref) and np.allclose(c + s, 1.0)


def test_gmm_one_component_equals_gaussian(rng):
    dy_row = np.array([[0.2, 1.3]])
    z = rng.normal(size=(1, 30))
    c1, _, _ = Gaussian().cdf(z, dy_row)
    c2, _, _ = GMM(1).cdf(z, np.array([[0.0, 0.2, 1.3]]))
    assert np.array_equal(c1, c2) or np.allclose(c1, c2, rtol=0, atol=1e-15)


def test_any_family_pmf_valid(rng):
    store = ParamStore()
    fams = [make_family(n, store, f"p{n}", 1, rng) for n in
            ("gaussian", "laplacian", "gmm5", "gmm10", "learned", "fulldyn")]
    for fam in fams:
        for _ in range(5):
            dy_row = (fam.param_init() + rng.normal(scale=0.5, size=fam.n_params))[None]
            pmf = continuous_pmf(lambda z: fam.cdf(z[None], dy_row, np.zeros(1, int))[0][0],
                                 0, int(rng.integers(1, 300)), scale=0.05, offset=-4)
            assert pmf.freqs.sum() == TOTAL and pmf.freqs.min() >= 1


def _learned(rng, n_static=2, dims=(1, 3, 3, 3, 1)):
    store = ParamStore()
    return store, LearnedCDF(store, "c", 2, dims, n_static, 4.0, rng)


def test_learned_cdf_monotone(rng):
    store, fam = _learned(rng)
    for _ in range(1000):
        for p in store.values():
            p.value[...] = rng.normal(scale=2.0, size=p.shape)
        dy_row = rng.normal(scale=2.0, size=(1, fam.n_params))
        z = np.sort(rng.normal(scale=5.0, size=(1, 16)), axis=1)
        c, _, _ = fam.cdf(z, dy_row, np.array([int(rng.integers(2))]))
        assert np.all(np.diff(c[0]) >= 0) and np.all((c >= 0) & (c <= 1))


def test_learned_cdf_affine_when_gates_closed(rng):
    # a = 0 and softplus(W) = 1 everywhere: stages are h -> 1 1^T h + b
    store, fam = _learned(rng)
    one = math.log(math.expm1(1.0))
    bs = []
    for w, b, a in fam.static:
        w.value[...] = one
        a.value[...] = 0.0
        bs.append(b.value[0])
    dyn_b = [rng.normal(size=o) for o, _ in fam.dyn_shapes]
    dy_row = np.concatenate([np.concatenate([np.full(o * i, one), dyn_b[k], np.zeros(o)])
                         for k, (o, i) in enumerate(fam.dyn_shapes)])[None]
    z = np.linspace(-0.3, 0.3, 7)
    h = z[:, None]
    for b in bs + dyn_b:
        h = h @ np.ones((h.shape[1], len(b))) + b
    c, _, _ = fam.cdf(z[None], dy_row, np.zeros(1, int))
    assert np.allclose(c[0], expit(h[:, 0]), rtol=0, atol=1e-13)


def test_learned_cdf_grad_check(rng):
    store, fam = _learned(rng)
    dy_row = fam.param_init()[None].repeat(4, 0) + rng.normal(scale=0.3, size=(4, fam.n_params))
    from sgz.diff_core import Parameter
    dynp = Parameter(dy_row)
    z_lo = rng.normal(size=4)
    ch = np.array([0, 1, 1, 0])

    def loss():
        store.zero_grad()
        dynp.zero_grad()
        bits, back = interval_bits(fam, z_lo, z_lo + 0.3, np.zeros(4, bool), np.zeros(4, bool),
                                   dynp.value, ch)
        ddyn, _, _ = back(np.ones(4))
        dynp.grad += ddyn
        return float(bits.sum())

    assert grad_check(loss, list(store.values()) + [dynp], probes=30) < 1e-4


@pytest.mark.parametrize("name", ["gaussian", "laplacian", "gmm5"])
def test_parametric_interval_grads(name, rng):
    fam = make_family(name, ParamStore(), "x", 1, rng)
    from sgz.diff_core import Parameter
    dynp = Parameter(fam.param_init()[None].repeat(5, 0) + rng.normal(scale=0.3, size=(5, fam.n_params)))
    z = rng.normal(size=5)
    open_up = np.array([False, False, True, False, False])

    def loss():
        dynp.zero_grad()
        bits, back = interval_bits(fam, z, z + 0.25, np.zeros(5, bool), open_up, dynp.value)
        dynp.grad += back(np.ones(5))[0]
        return float(bits.sum())

    assert grad_check(loss, [dynp], probes=30) < 1e-4


def test_interval_open_ends_sum_to_one(rng):
    g = Gaussian()
    dy_row = np.array([[0.0, 0.5]] * 3)
    cuts = np.array([-1.0, 0.2])
    lo = np.array([0.0, cuts[0], cuts[1]])
    up = np.array([cuts[0], cuts[1], 0.0])
    bits, _ = interval_bits(g, lo, up, np.array([True, False, False]), np.array([False, False, True]), dy_row)
    assert np.sum(2.0 ** -bits) == pytest.approx(1.0, abs=1e-12)


def test_categorical_bits_exact(rng):
    logits = rng.normal(size=(6, 5))
    t = rng.integers(0, 5, 6)
    bits, _ = categorical_bits(logits, t)
    p = np.exp(logits) / np.exp(logits).sum(1, keepdims=True)
    assert np.allclose(bits, -np.log2(p[np.arange(6), t]))


def test_factorized_prior_bits(rng):
    store = ParamStore()
    prior = FactorizedPrior(store, "f", 2, rng)
    assert factorized_prior_bits(np.zeros((0, 2)), prior, 32) == 0.0
    y = rng.integers(-3, 4, size=(10, 2))
    total = factorized_prior_bits(y, prior, 32)
    per = sum(factorized_prior_bits(y[i:i + 1], prior, 32) for i in range(10))
    assert total == pytest.approx(per)


def test_single_half_mass_is_one_bit():
    # a symmetric density puts exactly half its mass on (-inf, 0]
    g = Gaussian()
    bits, _ = interval_bits(g, np.array([0.0]), np.array([0.0]), np.array([True]), np.array([False]),
                            g.param_init()[None])
    assert bits[0] == pytest.approx(1.0, abs=1e-12)
