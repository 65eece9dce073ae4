import json
import os
import subprocess
import sys

import numpy as np
import pytest

from stagekde import _kernels as K


def xi_inputs(rng, W=300, n=80, d=2):
    return (rng.normal(size=(W, d)), rng.uniform(0.2, 1.5, W), rng.normal(size=(n, d)),
            np.full(n, 1.0 / n))


@pytest.mark.parametrize("mode,beta", [(K.MODE_KL, 0.0), (K.MODE_BETA, 1.0), (K.MODE_BETA, 0.5),
                                       (K.MODE_BETA, 0.2)])
def test_word_xi_means_backends_agree(mode, beta, rng):
    args = xi_inputs(rng)
    a = K.word_xi_means_numba(*args, mode, beta)
    b = K.word_xi_means_numpy(*args, mode, beta)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)


def test_word_xi_means_direct(rng):
    C, h, X, w = xi_inputs(rng, W=4, n=5, d=1)
    for mode, beta in [(K.MODE_KL, 0.0), (K.MODE_BETA, 0.5)]:
        got = K.word_xi_means(C, h, X, w, mode, beta)
        for j in range(4):
            phi = np.exp(-(X[:, 0] - C[j, 0]) ** 2 / (2 * h[j] ** 2)) / np.sqrt(2 * np.pi * h[j] ** 2)
            xi = np.log(phi) if mode == K.MODE_KL else (phi ** beta - 1) / beta
            assert got[j] == pytest.approx((w * xi).sum(), rel=1e-12)


@pytest.mark.parametrize("mode,beta", [(K.MODE_KL, 0.0), (K.MODE_BETA, 1.0), (K.MODE_BETA, 0.5)])
def test_grid_probe_backends_agree(mode, beta, rng):
    gx = np.linspace(-6, 6, 257)[:, None]
    gw = np.full(257, 12 / 256)
    base = np.exp(-gx[:, 0] ** 2 / 2) / np.sqrt(2 * np.pi)
    base = np.log(base) if mode == K.MODE_KL else (base ** beta - 1) / beta
    C, h = rng.normal(size=(40, 1)), rng.uniform(0.3, 1.0, 40)
    a = K.grid_probe_numba(base, gx, gw, C, h, 0.4, mode, beta)
    b = K.grid_probe_numpy(base, gx, gw, C, h, 0.4, mode, beta)
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_weighted_triple_row_backends_agree(rng):
    L, W, d = 7, 50, 2
    args = (rng.normal(size=(L, d)), rng.uniform(0.1, 1, L), rng.dirichlet(np.ones(L)),
            rng.normal(size=d), 0.6, rng.normal(size=(W, d)), rng.uniform(0.1, 1, W))
    np.testing.assert_allclose(K.weighted_triple_row_numba(*args), K.weighted_triple_row_numpy(*args),
                               rtol=1e-12)


def test_set_threads_clamps():
    assert K.set_threads(10 ** 6) >= 1
    assert K.set_threads(0) == 1


def test_thread_count_does_not_change_values(rng):
    args = xi_inputs(rng, W=2000)
    K.set_threads(1)
    a = K.word_xi_means(*args, K.MODE_KL, 0.0)
    K.set_threads(8)
    b = K.word_xi_means(*args, K.MODE_KL, 0.0)
    np.testing.assert_array_equal(a, b)


def test_numpy_backend_fit_matches():
    code = ("import json, numpy as np, stagekde as s\n"
            "X = s.load_target('c').sample(80, np.random.default_rng(1))\n"
            "D = s.build_dictionary(X[:20], s.build_b1(X[:20]))\n"
            "e = s.fit(D, X[20:], s.FitConfig(M=15, family=s.DivergenceFamily.power(0.5)))\n"
            "print(json.dumps([e.chosen.tolist(), e.loss_trace[-1].value]))\n")
    outs = []
    for flag in ("0", "1"):
        env = dict(os.environ, STAGEKDE_NUMBA=flag)
        r = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
        assert r.returncode == 0, r.stderr
        outs.append(json.loads(r.stdout))
    assert outs[0][0] == outs[1][0]
    assert outs[0][1] == pytest.approx(outs[1][1], rel=1e-12)
