import math

import numpy as np
import pytest
import scipy.linalg

from mxl.spectral import (
    DomainError,
    Spectrahedron,
    dual_norm,
    entropy_conjugate,
    entropy_gradient,
    fenchel_coupling,
    herm_expm,
    hermitize,
    mirror_map,
    nuclear_norm,
    quantum_kl,
    random_hermitian,
    trace_inner,
    von_neumann_entropy,
)

UNIT2 = Spectrahedron(2, 1.0)
UNIT3 = Spectrahedron(3, 1.0)


def test_herm_expm_zero_is_identity():
    assert np.allclose(herm_expm(np.zeros((2, 2))), np.eye(2))


def test_herm_expm_diagonal():
    h = np.diag([math.log(2), math.log(3)]).astype(complex)
    assert np.allclose(herm_expm(h), np.diag([2.0, 3.0]))


def test_herm_expm_matches_scaling_squaring_oracle(rng):
    # independent oracle: scipy's Pade/scaling-squaring expm
    for _ in range(20):
        h = random_hermitian(4, rng, scale=2.0)
        ours = herm_expm(h)
        ref = scipy.linalg.expm(h)
        assert np.linalg.norm(ours - ref) / np.linalg.norm(ref) < 1e-10


def test_herm_expm_rejects_bad_input():
    with pytest.raises(DomainError):
        herm_expm(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(DomainError):
        herm_expm(np.array([[np.inf, 0.0], [0.0, 1.0]]))


def test_hermitize_fixed_point_and_antisymmetric_part(rng):
    h = random_hermitian(3, rng)
    assert np.allclose(hermitize(h), h)
    a = np.array([[0.0, 1.0], [0.0, 0.0]])
    assert np.allclose(hermitize(a), np.array([[0.0, 0.5], [0.5, 0.0]]))


def test_hermitize_linearity(rng):
    for _ in range(10):
        a = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        b = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        assert np.allclose(hermitize(a + b), hermitize(a) + hermitize(b))


def test_hermitize_rejects_non_square():
    with pytest.raises(ValueError):
        hermitize(np.zeros((2, 3)))


def test_entropy_uniform_point():
    x = np.eye(2, dtype=complex) / 3.0
    assert von_neumann_entropy(x, UNIT2) == pytest.approx(-math.log(3), abs=1e-12)


def test_entropy_pure_extreme_point():
    x = np.diag([1.0, 0.0]).astype(complex)
    assert von_neumann_entropy(x, UNIT2) == pytest.approx(0.0, abs=1e-12)


def test_entropy_eigenvalue_sum_oracle(rng):
    # oracle: evaluate directly on the eigenvalue vector plus the slack slot
    for _ in range(50):
        x = UNIT3.sample(rng)
        w = np.linalg.eigvalsh(x)
        slack = 1.0 - w.sum()
        parts = np.concatenate([w, [slack]])
        parts = parts[parts > 0]
        ref = float(np.sum(parts * np.log(parts)))
        val = von_neumann_entropy(x, UNIT3)
        assert val == pytest.approx(ref, abs=1e-10)
        assert val >= -math.log(4) - 1e-12


def test_entropy_rejects_outside_domain():
    with pytest.raises(DomainError):
        von_neumann_entropy(np.eye(2, dtype=complex), UNIT2)


def test_conjugate_at_zero():
    assert entropy_conjugate(np.zeros((2, 2))) == pytest.approx(math.log(3), abs=1e-12)


def test_conjugate_large_scores_shifted():
    val = entropy_conjugate(np.diag([1000.0, 0.0]).astype(complex))
    # oracle: 1000 + log(exp(-1000) + 1 + exp(-1000)) evaluated analytically
    assert math.isfinite(val)
    assert val == pytest.approx(1000.0, abs=1e-9)


def test_conjugate_fenchel_young(rng):
    for _ in range(2000):
        x = UNIT3.sample(rng)
        y = random_hermitian(3, rng, scale=2.0)
        assert entropy_conjugate(y) >= trace_inner(y, x) - von_neumann_entropy(x, UNIT3) - 1e-10


def test_mirror_map_zero_score():
    assert np.allclose(mirror_map(np.zeros((2, 2)), UNIT2), np.eye(2) / 3.0)


def test_mirror_map_saturated_score():
    x = mirror_map(np.diag([50.0, 0.0]).astype(complex), UNIT2)
    assert np.all(np.isfinite(x.real)) and np.all(np.isfinite(x.imag))
    # oracle: e^50/(2 + e^50) and 1/(2 + e^50) via the overflow-free rearrangement
    top = 1.0 / (1.0 + 2.0 * math.exp(-50.0))
    bottom = math.exp(-50.0) / (1.0 + 2.0 * math.exp(-50.0))
    assert float(x[0, 0].real) >= 1.0 - 1e-20
    assert float(x[0, 0].real) == pytest.approx(top, rel=1e-12)
    assert float(x[1, 1].real) == pytest.approx(bottom, rel=1e-9)


def test_mirror_map_matches_naive_formula_in_safe_range(rng):
    # oracle: the naive expression exp(Y)/(1 + tr exp Y), fine for moderate scores
    for _ in range(100):
        dim = int(rng.integers(1, 5))
        dom = Spectrahedron(dim, 1.0)
        y = random_hermitian(dim, rng)
        y *= 30.0 * rng.random() / max(dual_norm(y), 1e-12)
        e = herm_expm(y)
        naive = e / (1.0 + float(np.trace(e).real))
        assert np.linalg.norm(mirror_map(y, dom) - naive) < 1e-12 * max(1.0, np.linalg.norm(naive))


def test_mirror_map_not_shift_invariant():
    y = np.diag([1.0, -1.0]).astype(complex)
    a = mirror_map(y, UNIT2)
    b = mirror_map(y + 2.0 * np.eye(2), UNIT2)
    assert not np.allclose(a, b)


def test_mirror_map_scales_with_trace_bound():
    dom = Spectrahedron(2, 2.5)
    assert np.allclose(mirror_map(np.zeros((2, 2)), dom), 2.5 * np.eye(2) / 3.0)


def test_mirror_map_rejects_non_hermitian():
    with pytest.raises(DomainError):
        mirror_map(np.array([[0.0, 1.0], [0.0, 0.0]]), UNIT2)


def test_mirror_map_block_structure_preserved(rng):
    dom = Spectrahedron(4, 1.0, blocks=(2, 2))
    y = np.zeros((4, 4), dtype=complex)
    y[:2, :2] = random_hermitian(2, rng, scale=3.0)
    y[2:, 2:] = random_hermitian(2, rng, scale=3.0)
    x = mirror_map(y, dom)
    assert dom.off_block_mass(x) < 1e-14
    assert dom.contains(x)
    with pytest.raises(DomainError):
        mirror_map(random_hermitian(4, rng), dom)


def test_quantum_kl_identity_is_zero(rng):
    for _ in range(20):
        x = UNIT3.sample(rng)
        assert abs(quantum_kl(x, x)) < 1e-10


def test_quantum_kl_rank_one_reference():
    eps = 0.1
    val = quantum_kl(np.diag([1.0, 0.0]).astype(complex), np.diag([1 - eps, eps]).astype(complex))
    assert val == pytest.approx(-math.log(1 - eps), abs=1e-12)


def test_quantum_kl_commuting_matches_classical_oracle(rng):
    # oracle: classical KL over eigenvalues augmented with the trace slack slot
    for _ in range(50):
        p = rng.dirichlet(np.ones(4))
        q = rng.dirichlet(np.ones(4))
        ref = float(np.sum(p[:3] * np.log(p[:3] / q[:3]))) + p[3] * math.log(p[3] / q[3])
        val = quantum_kl(np.diag(p[:3]).astype(complex), np.diag(q[:3]).astype(complex))
        assert val == pytest.approx(ref, abs=1e-10)


def test_quantum_kl_infinite_on_null_mass():
    xref = np.diag([0.5, 0.5]).astype(complex)
    x = np.diag([1.0, 0.0]).astype(complex)
    assert quantum_kl(xref, x) == math.inf


def test_fenchel_coupling_zero_at_own_score(rng):
    for _ in range(20):
        x = UNIT3.sample(rng)
        x = 0.9 * x + 0.1 * UNIT3.center()  # keep strictly interior for the log
        y = entropy_gradient(x, UNIT3)
        assert abs(fenchel_coupling(x, y, UNIT3)) < 1e-9


def test_fenchel_coupling_center_zero():
    assert fenchel_coupling(np.eye(2, dtype=complex) / 3, np.zeros((2, 2)), UNIT2) == pytest.approx(
        0.0, abs=1e-12
    )


def test_fenchel_coupling_equals_divergence(rng):
    for _ in range(500):
        dim = int(rng.integers(1, 5))
        dom = Spectrahedron(dim, 1.0)
        x = dom.sample(rng)
        y = random_hermitian(dim, rng, scale=2.0)
        f = fenchel_coupling(x, y, dom)
        d = quantum_kl(x, mirror_map(y, dom))
        assert f >= -1e-12
        assert abs(f - d) < 1e-9


def test_norms_basic():
    h = np.diag([1.0, -2.0]).astype(complex)
    assert nuclear_norm(h) == pytest.approx(3.0)
    assert dual_norm(h) == pytest.approx(2.0)


def test_nuclear_norm_equals_trace_for_psd(rng):
    for _ in range(20):
        x = UNIT3.sample(rng)
        assert nuclear_norm(x) == pytest.approx(float(np.trace(x).real), abs=1e-10)


def test_norms_hoelder_pair(rng):
    for _ in range(200):
        a = random_hermitian(3, rng)
        b = random_hermitian(3, rng)
        assert abs(trace_inner(a, b)) <= nuclear_norm(a) * dual_norm(b) + 1e-10


class TestSpectrahedron:
    def test_membership(self, rng):
        dom = Spectrahedron(3, 1.0)
        assert dom.contains(np.eye(3, dtype=complex) / 4)
        assert not dom.contains(np.eye(3, dtype=complex))
        assert not dom.contains(np.diag([1.5, -0.5, 0.0]).astype(complex))
        for _ in range(50):
            assert dom.contains(dom.sample(rng))

    def test_block_membership(self):
        dom = Spectrahedron(4, 1.0, blocks=(2, 2))
        x = np.eye(4, dtype=complex) / 8
        assert dom.contains(x)
        bad = x.copy()
        bad[0, 3] = bad[3, 0] = 0.05
        assert not dom.contains(bad)

    def test_bad_blocks_rejected(self):
        with pytest.raises(ValueError):
            Spectrahedron(4, 1.0, blocks=(2, 3))

    def test_projection_idempotent_and_feasible(self, rng):
        dom = Spectrahedron(3, 1.0)
        for _ in range(30):
            raw = random_hermitian(3, rng, scale=2.0)
            p = dom.project(raw)
            assert dom.contains(p)
            assert np.linalg.norm(dom.project(p) - p) < 1e-10

    def test_projection_no_op_inside(self, rng):
        dom = Spectrahedron(3, 1.0)
        x = dom.sample(rng)
        assert np.linalg.norm(dom.project(x) - x) < 1e-10

    def test_center_is_mirror_of_zero(self):
        dom = Spectrahedron(3, 2.0)
        assert np.allclose(dom.center(), mirror_map(np.zeros((3, 3)), dom))


def test_score_shift_trace_saturation():
    # along a ray with a unique top eigenvalue the output trace approaches the bound
    dom = Spectrahedron(3, 1.0)
    base = np.diag([2.0, 1.0, 0.5]).astype(complex)
    traces = [float(np.trace(mirror_map(t * base, dom)).real) for t in (5, 20, 100)]
    assert traces == sorted(traces)
    assert traces[-1] > 1.0 - 1e-12
