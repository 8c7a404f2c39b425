import numpy as np
import pytest

from transmix import ImageShape, TransformationSet, shift_op
from transmix import mtca as mtca_mod
from transmix import tca as tca_mod
from transmix import tmg as tmg_mod
from transmix.classify import bayes_classify, classify_batch, marginal_loglik
from transmix.mtca import MtcaModel, init_mtca

from oracles import mtca_loglik_dense


def small_set(shape, offsets, boundary="wrap"):
    ops = tuple(shift_op(shape, di, dj, boundary) for di, dj in offsets)
    return TransformationSet(ops, boundary,
                             params=tuple((float(a), float(b)) for a, b in offsets))


def random_mtca(seed, shape=ImageShape(2, 2), offsets=((0, 0), (0, 1)), C=2,
                K=1, boundary="wrap", fast=False):
    rng = np.random.default_rng(seed)
    ts = small_set(shape, offsets, boundary)
    n, L = shape.n, len(offsets)
    return MtcaModel(shape=shape, transforms=ts,
                     pi=rng.dirichlet(np.ones(C) * 5),
                     mu=rng.uniform(-1, 1, (C, n)),
                     loadings=rng.uniform(-1, 1, (C, n, K)),
                     phi=rng.uniform(0.3, 1.5, (C, n)),
                     rho=rng.dirichlet(np.ones(L) * 5, size=C).T,
                     psi=rng.uniform(0.3, 1.0, n),
                     fast_likelihood=fast)


def test_k0_reduces_to_tmg():
    model = random_mtca(0, K=0, C=3)
    as_tmg = tmg_mod.TmgModel(shape=model.shape, transforms=model.transforms,
                              pi=model.pi, mu=model.mu, phi=model.phi,
                              rho=model.rho, psi=model.psi)
    rng = np.random.default_rng(1)
    for _ in range(10):
        x = rng.uniform(-2, 2, model.n)
        assert mtca_mod.loglik(model, x[None])[0] == pytest.approx(
            tmg_mod.loglik(as_tmg, x[None])[0], abs=1e-10)


def test_c1_reduces_to_tca():
    model = random_mtca(2, C=1, K=2)
    as_tca = tca_mod.TcaModel(shape=model.shape, transforms=model.transforms,
                              mu=model.mu[0], loadings=model.loadings[0],
                              phi=model.phi[0], rho=model.rho[:, 0],
                              psi=model.psi)
    rng = np.random.default_rng(3)
    for _ in range(10):
        x = rng.uniform(-2, 2, model.n)
        assert mtca_mod.loglik(model, x[None])[0] == pytest.approx(
            tca_mod.loglik(as_tca, x[None])[0], abs=1e-10)


def test_posterior_matches_dense_oracle():
    for seed in range(8):
        model = random_mtca(10 + seed, offsets=((0, 0), (1, 0)), C=2, K=1,
                            boundary="wrap" if seed % 2 else "zero")
        x = np.random.default_rng(30 + seed).uniform(-1, 1, model.n)
        post = mtca_mod.posterior(model, x)
        assert post.loglik == pytest.approx(mtca_loglik_dense(model, x), abs=1e-6)
        assert post.resp.sum() == pytest.approx(1.0, abs=1e-12)


def test_em_monotone():
    gen = random_mtca(4, shape=ImageShape(3, 3), offsets=((0, 0), (0, 1)), C=2, K=1)
    X = mtca_mod.sample(gen, seed=5, size=40)
    model = init_mtca(gen.transforms, 2, 1, X, seed=6)
    previous = -np.inf
    for _ in range(50):
        model, total = mtca_mod.em_step(model, X)
        assert total >= previous - 1e-9 * abs(previous)
        previous = total


def test_bayes_classify_basics():
    model = random_mtca(7, C=1, K=1)
    twin = random_mtca(7, C=1, K=1)
    x = np.zeros(model.n)
    assert bayes_classify([model, twin], x) == 0  # identical models: tie-break

    # doubled prior on class 1 with equal likelihoods
    assert bayes_classify([model, twin], x, priors=[1.0, 2.0]) == 1

    with pytest.raises(ValueError):
        bayes_classify([model], x)


def test_bayes_classify_recovers_generator():
    rng = np.random.default_rng(8)
    shape = ImageShape(3, 3)
    ts = small_set(shape, ((0, 0), (0, 1)))
    models = []
    for c in range(2):
        mu = np.zeros(9)
        mu[c * 4] = 3.0  # well separated means
        models.append(tca_mod.TcaModel(
            shape=shape, transforms=ts, mu=mu,
            loadings=0.1 * rng.standard_normal((9, 1)),
            phi=np.full(9, 0.05), rho=np.array([0.6, 0.4]),
            psi=np.full(9, 0.05)))
    hits = 0
    for i in range(200):
        k = i % 2
        x = tca_mod.sample(models[k], seed=1000 + i)
        hits += bayes_classify(models, x) == k
    assert hits >= 190  # >= 95% of 200


def test_argmax_invariant_to_common_shift():
    class Shifted:
        def __init__(self, inner, delta):
            self.inner, self.delta = inner, delta

        def loglik(self, x):
            return marginal_loglik(self.inner, x) + self.delta

    a = random_mtca(9, C=1)
    b = random_mtca(19, C=1)
    rng = np.random.default_rng(11)
    for _ in range(20):
        x = rng.uniform(-1, 1, a.n)
        base = bayes_classify([a, b], x)
        shifted = bayes_classify([Shifted(a, 123.0), Shifted(b, 123.0)], x)
        assert base == shifted


def test_classify_batch_shape():
    a = random_mtca(20, C=1)
    b = random_mtca(21, C=1)
    X = np.random.default_rng(22).uniform(-1, 1, (6, a.n))
    out = classify_batch([a, b], X)
    assert out.shape == (6,) and out.dtype == np.int64
