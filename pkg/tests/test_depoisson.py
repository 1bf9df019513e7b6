import math

import numpy as np
import pytest

from poissongen.bounds import depoisson_gap_bound, ergodicity_certificate
from poissongen.depoisson import (
    GrowthBound,
    cauchy_reconstruct,
    read_sequence_csv,
    residual_decay_fit,
    residuals,
    transform_eval,
    transform_function,
    write_fit_json,
    write_sequence_csv,
)
from poissongen.errors import GrowthBoundViolation, NotEntire, ParameterOutOfRange
from poissongen.markov import FiniteKernel


def const(c):
    return lambda k: np.full(np.shape(k), c, dtype=float)


def test_transform_examples():
    for z in [0.0, 0.7, 5.0, 40.0, 2 + 3j]:
        assert transform_eval(const(3.0), z, growth=GrowthBound(3.0)) == pytest.approx(3.0, abs=1e-12)
    for t in [0.5, 3.0, 25.0]:
        got = transform_eval(lambda k: 0.5 ** k, t)
        assert got.real == pytest.approx(math.exp(-0.5 * t), rel=1e-12)
        assert got.imag == 0.0
    lin = GrowthBound(1.0, 1.0, 1.0)
    for z in [1.0, 7.5, 1 - 2j]:
        assert transform_eval(lambda k: k.astype(float), z, growth=lin) == pytest.approx(z, abs=1e-11)


def test_growth_violation():
    with pytest.raises(GrowthBoundViolation):
        transform_eval(const(3.0), 1.0)
    with pytest.raises(ParameterOutOfRange):
        transform_eval([1.0, 1.0, 1.0], 10.0)


def test_linearity():
    g = lambda k: 0.3 ** k  # noqa: E731
    h = lambda k: 1.0 / (k + 1.0)  # noqa: E731
    for z in [0.4, 3.0, 12.0]:
        lhs = transform_eval(lambda k: 2 * g(k) - 0.5 * h(k), z, growth=GrowthBound(2.5))
        rhs = 2 * transform_eval(g, z) - 0.5 * transform_eval(h, z)
        assert abs(lhs - rhs) <= 1e-12


def test_real_input_real_output():
    assert transform_eval(lambda k: (-0.7) ** k, 9.0).imag == 0.0


@pytest.mark.parametrize("n", [0, 1, 5, 10, 20])
def test_cauchy_examples(n):
    assert cauchy_reconstruct(lambda z: np.full(np.shape(z), 2.5 + 0j), n) == pytest.approx(2.5, rel=1e-12)
    if n:
        assert cauchy_reconstruct(lambda z: z, n) == pytest.approx(n, rel=1e-8)
    assert cauchy_reconstruct(lambda z: np.exp(-0.5 * z), n) == pytest.approx(0.5 ** n, rel=1e-8)


def test_roundtrip_via_transform():
    G = transform_function(lambda k: k.astype(float) ** 2, growth=GrowthBound(1.0, 1.0, 2.0))
    for n in [1, 4, 12]:
        assert cauchy_reconstruct(G, n) == pytest.approx(n * n, rel=1e-8)


def test_not_entire_detected():
    with pytest.raises(NotEntire):
        cauchy_reconstruct(lambda z: 1.0 / (z - 2.0j), 3)
    with pytest.raises(ParameterOutOfRange):
        cauchy_reconstruct(lambda z: z, -1)


def test_decay_fit_constant_at_floor():
    fit = residual_decay_fit(const(1.0), range(5, 20))
    assert fit.status == "residual at floor"
    with pytest.raises(ParameterOutOfRange):
        residual_decay_fit(const(1.0), range(1, 5))


def test_decay_fit_harmonic_self_consistent():
    h = lambda k: 1.0 / (np.asarray(k, dtype=float) + 1)  # noqa: E731
    short = residual_decay_fit(h, range(10, 41))
    long = residual_decay_fit(h, range(10, 161))
    assert short.status == "ok"
    assert abs(short.slope - long.slope) <= 0.15


def test_residuals_of_chain_gap_sequence():
    P = FiniteKernel([[0.5, 0.3, 0.2], [0.2, 0.6, 0.2], [0.1, 0.3, 0.6]])
    gap = np.array([0.4, -0.3, 0.9])
    p0 = np.array([1.0, 0.0, 0.0])
    mus = [p0]
    for _ in range(400):
        mus.append(mus[-1] @ P.matrix)
    g = np.array(mus) @ gap
    C, a = ergodicity_certificate(P)
    ks = np.arange(1, 41)
    r = residuals(g, ks, growth=GrowthBound(1.0))
    assert np.all(np.abs(r) <= depoisson_gap_bound("bounded", 1.0, C, a, ks) + 1e-10)


def test_csv_roundtrip(tmp_path):
    g = np.array([1.0, 0.5, 1 / 3, 0.1])
    write_sequence_csv(tmp_path / "g.csv", g)
    np.testing.assert_array_equal(read_sequence_csv(tmp_path / "g.csv"), g)
    (tmp_path / "bad.csv").write_text("k,g_k\n0,1\n2,3\n")
    with pytest.raises(ParameterOutOfRange):
        read_sequence_csv(tmp_path / "bad.csv")
    fit = residual_decay_fit(lambda k: 1.0 / (np.asarray(k, float) + 1), range(10, 30))
    write_fit_json(tmp_path / "fit.json", fit)
    assert '"status": "ok"' in (tmp_path / "fit.json").read_text()
