import math
from pathlib import Path

import numpy as np
import pytest

import chains
from rwre import envmodel
from rwre.envmodel import EnvironmentSpec
from rwre.errors import ModelError

MODELS = Path(__file__).resolve().parent.parent / "models"


def test_rho_derived_from_omega():
    spec = chains.chain_mk_k1()
    assert np.allclose(spec.rho, [0.5, 2.0], rtol=0, atol=1e-15)
    assert spec.c_rho == pytest.approx(0.95 / 0.05)


def test_stationary_k2_closed_form():
    pi = envmodel.stationary_distribution(chains.chain_mk_k2().H)
    assert np.max(np.abs(pi - np.array([31 / 35, 4 / 35]))) < 1e-12


def test_stationary_two_state_formula():
    H = np.array([[0.8, 0.2], [0.6, 0.4]])
    pi = envmodel.stationary_distribution(H)
    assert np.max(np.abs(pi - np.array([0.75, 0.25]))) < 1e-12
    assert np.max(np.abs(pi @ H - pi)) < 1e-12


def test_stationary_doubly_stochastic_uniform():
    pi = envmodel.stationary_distribution(np.array([[0.3, 0.7], [0.7, 0.3]]))
    assert np.max(np.abs(pi - 0.5)) < 1e-12


def test_stationary_periodic_chain():
    pi = envmodel.stationary_distribution(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert np.max(np.abs(pi - 0.5)) < 1e-12


def test_stationary_reducible_names_components():
    with pytest.raises(ModelError, match="strongly connected components"):
        envmodel.stationary_distribution(np.eye(2))


def test_validate_identity_chain_not_irreducible():
    spec = EnvironmentSpec(states=("a", "b"), H=np.eye(2),
                           omega=np.array([2 / 3, 1 / 3]), epsilon=0.05)
    rep = envmodel.validate(spec)
    assert not rep.irreducible
    assert len(rep.components) == 2
    assert rep.drift is None


def test_validate_k2_report():
    spec = chains.chain_mk_k2()
    rep = envmodel.validate(spec)
    assert rep.irreducible
    drift_oracle = float(
        envmodel.stationary_distribution(spec.H) @ np.log(spec.rho)
    )
    assert rep.drift == pytest.approx(drift_oracle, abs=1e-12)
    assert rep.drift < 0
    assert rep.a3_negative_beta is not None and rep.a3_nonnegative_beta is not None
    # Jensen consequence: both witnesses present implies negative drift.
    assert rep.drift < 0
    assert rep.arithmetic_span.arithmetic
    assert rep.ellipticity_margin == pytest.approx(1 / 3, abs=1e-12)


def test_ellipticity_boundary_rejected():
    with pytest.raises(ModelError, match="ellipticity"):
        EnvironmentSpec(states=("a", "b"), H=np.array([[0.5, 0.5], [0.5, 0.5]]),
                        omega=np.array([0.05, 0.5]), epsilon=0.05)


def test_non_stochastic_row_rejected_with_index():
    with pytest.raises(ModelError, match="row 1"):
        EnvironmentSpec(states=("a", "b"),
                        H=np.array([[0.5, 0.5], [0.6, 0.35]]),
                        omega=np.array([0.4, 0.6]), epsilon=0.1)


def test_omega_outside_unit_interval_rejected():
    with pytest.raises(ModelError, match="omega"):
        EnvironmentSpec(states=("a",), H=np.array([[1.0]]),
                        omega=np.array([1.0]), epsilon=0.1)


def test_reverse_kernel_detailed_balance_case():
    spec = EnvironmentSpec(states=("a", "b"), H=np.array([[0.8, 0.2], [0.6, 0.4]]),
                           omega=np.array([2 / 3, 1 / 3]), epsilon=0.05)
    rev = envmodel.reverse_kernel(spec)
    # pi_1 H_12 = 0.75 * 0.2 = 0.15 = pi_2 H_21: reversible, so unchanged.
    assert np.max(np.abs(rev - spec.H)) < 1e-12


def test_reverse_kernel_every_two_state_chain_reversible():
    rng = np.random.default_rng(5)
    for _ in range(20):
        p, q = rng.uniform(0.05, 0.95, 2)
        spec = EnvironmentSpec(states=("a", "b"),
                               H=np.array([[1 - p, p], [q, 1 - q]]),
                               omega=np.array([0.4, 0.6]), epsilon=0.1)
        assert np.max(np.abs(envmodel.reverse_kernel(spec) - spec.H)) < 1e-12


def test_reverse_kernel_involution_and_invariance():
    rng = np.random.default_rng(11)
    for _ in range(10):
        H = rng.uniform(0.05, 1.0, (3, 3))
        H /= H.sum(axis=1, keepdims=True)
        spec = EnvironmentSpec(states=("a", "b", "c"), H=H,
                               omega=np.array([0.3, 0.5, 0.7]), epsilon=0.1)
        pi = envmodel.stationary_distribution(H)
        rev = envmodel.reverse_kernel(spec)
        assert np.max(np.abs(pi @ rev - pi)) < 1e-12
        spec_rev = EnvironmentSpec(states=spec.states, H=rev,
                                   omega=spec.omega, epsilon=spec.epsilon)
        assert np.max(np.abs(envmodel.reverse_kernel(spec_rev) - H)) < 1e-12


def test_arithmetic_half_two_span_log2():
    span = envmodel.detect_arithmetic(chains.chain_mk_k1())
    assert span.arithmetic
    assert span.alpha == pytest.approx(math.log(2.0), abs=1e-9)
    shifted = np.minimum(span.gamma, span.alpha - span.gamma)
    assert np.max(shifted) < 1e-9  # gamma is zero modulo the span


def test_arithmetic_rejects_incommensurable_odds():
    span = envmodel.detect_arithmetic(chains.nonarith_sub1())
    assert not span.arithmetic


def test_arithmetic_single_state():
    span = envmodel.detect_arithmetic(chains.single_state(0.4))
    assert span.arithmetic
    assert span.alpha == pytest.approx(abs(math.log(0.4)), abs=1e-12)


def test_arithmetic_scale_consistency():
    base = chains.chain_mk_k1()
    squared = EnvironmentSpec(
        states=base.states, H=base.H,
        omega=1.0 / (1.0 + base.rho**2), epsilon=0.04,
    )
    a1 = envmodel.detect_arithmetic(base).alpha
    a2 = envmodel.detect_arithmetic(squared).alpha
    assert a2 == pytest.approx(2.0 * a1, abs=1e-9)


def test_minorization_identical_rows():
    split = envmodel.minorization_split(chains.iid_k2(), m=1)
    assert split.r == pytest.approx(1.0, abs=1e-15)
    assert np.max(np.abs(split.theta)) < 1e-15
    assert np.allclose(split.psi, [1 / 5, 4 / 5], atol=1e-15)


def test_minorization_worked_example():
    spec = chains.chain_mk_k1()
    split = envmodel.minorization_split(spec, m=1)
    assert split.r == pytest.approx(0.8, abs=1e-15)
    assert np.allclose(split.psi, [0.75, 0.25], atol=1e-15)
    assert np.max(np.abs(split.theta - np.array([[0.2, 0.0], [0.0, 0.2]]))) < 1e-12


def test_minorization_periodic_has_no_uniform_coin():
    spec = EnvironmentSpec(states=("a", "b"), H=np.array([[0.0, 1.0], [1.0, 0.0]]),
                           omega=np.array([0.4, 0.6]), epsilon=0.1)
    with pytest.raises(ModelError, match="no uniform minorization"):
        envmodel.minorization_split(spec, m=1)
    # a zero column only shrinks the split measure's support, it is not fatal
    spec2 = EnvironmentSpec(states=("a", "b"), H=np.array([[0.5, 0.5], [1.0, 0.0]]),
                            omega=np.array([0.4, 0.6]), epsilon=0.1)
    split = envmodel.minorization_split(spec2, m=1)
    assert split.r == pytest.approx(0.5, abs=1e-15)
    assert np.allclose(split.psi, [1.0, 0.0], atol=1e-15)
    recon = split.theta + split.r * np.outer(np.ones(2), split.psi)
    assert np.max(np.abs(recon - spec2.H)) < 1e-12


def test_minorization_reconstruction_property():
    rng = np.random.default_rng(23)
    for _ in range(8):
        H = rng.uniform(0.01, 1.0, (3, 3))
        H /= H.sum(axis=1, keepdims=True)
        spec = EnvironmentSpec(states=("a", "b", "c"), H=H,
                               omega=np.array([0.3, 0.5, 0.7]), epsilon=0.1)
        for m in (1, 2, 3):
            split = envmodel.minorization_split(spec, m=m)
            Hm = np.linalg.matrix_power(H, m)
            recon = split.theta + split.r * np.outer(np.ones(3), split.psi)
            assert np.max(np.abs(recon - Hm)) < 1e-12
            assert np.all(split.theta >= 0)
            assert np.all(split.r * split.psi[None, :] <= Hm + 1e-15)


def test_model_files_match_programmatic_fixtures():
    pairs = {
        "chain-mk-k1.toml": chains.chain_mk_k1(),
        "chain-mk-k2.toml": chains.chain_mk_k2(),
        "iid-k1.toml": chains.iid_k1(),
        "iid-k2.toml": chains.iid_k2(),
        "nonarith-k2.toml": chains.nonarith_k2(),
        "nonarith-sub1.toml": chains.nonarith_sub1(),
    }
    for name, ref in pairs.items():
        spec = envmodel.load_model(MODELS / name)
        assert np.array_equal(spec.H, ref.H), name
        assert np.array_equal(spec.omega, ref.omega), name
        assert spec.epsilon == ref.epsilon, name


def test_model_text_exact_values_and_fractions():
    doc = envmodel.parse_model_text(
        'states = ["x"]\nepsilon = "0.05"\nH = [["1"]]\nomega = ["2/3"]\n'
    )
    spec = envmodel.spec_from_dict(doc)
    assert spec.omega[0] == 2 / 3
    assert spec.epsilon == 0.05


def test_model_text_accepts_bare_numbers_and_comments():
    spec = envmodel.spec_from_dict(envmodel.parse_model_text(
        "# comment\nstates = [\"a\", \"b\"]  # trailing\nepsilon = 0.05\n"
        "H = [[0.9, 0.1], [0.775, 0.225]]\nomega = [0.4, 0.6]\n"
    ))
    assert spec.H[1, 0] == 0.775


def test_model_text_errors():
    with pytest.raises(ModelError, match="missing field"):
        envmodel.spec_from_dict(envmodel.parse_model_text('states = ["a"]'))
    with pytest.raises(ModelError):
        envmodel.parse_model_text('H = [[0.5, 0.5]')  # unterminated array
    with pytest.raises(ModelError, match="cannot parse number"):
        envmodel.spec_from_dict(envmodel.parse_model_text(
            'states = ["a"]\nepsilon = "abc"\nH = [["1"]]\nomega = ["0.5"]'
        ))
