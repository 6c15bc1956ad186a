import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad
from scipy.linalg import expm

from conftest import kraus_superop, random_density, random_kraus
from nmlindblad.basis import build_basis
from nmlindblad.bath import OhmicBath
from nmlindblad.errors import ConsistencyError, DomainError, IllConditionedError, InvariantViolationError
from nmlindblad.lindblad import (
    CanonicalForm,
    DissipatorSeries,
    GeneratorSeries,
    TransferSeries,
    analyze,
    canonical_form,
    dissipator_matrix,
    extract_hamiltonian,
    generator,
    reconstruct_generator,
    superop_from_dissipator,
    time_derivative,
    transfer_matrix,
)
from nmlindblad.propagator import SIGMA_X, SIGMA_Y, SIGMA_Z, MapSeries, dephasing_map, unitary_map
from nmlindblad.superop import spost, spre, sprepost, unvec, vec

BASIS = build_basis(2)
PAULI = (SIGMA_X, SIGMA_Y, SIGMA_Z)


def lindblad_superop(H, rates_ops):
    out = -1j * (spre(H) - spost(H))
    for g, L in rates_ops:
        LdL = L.conj().T @ L
        out = out + g * (sprepost(L, L.conj().T) - 0.5 * spre(LdL) - 0.5 * spost(LdL))
    return out


def semigroup(L, dt, n):
    return MapSeries(2, dt, np.stack([expm(L * k * dt) for k in range(n + 1)]))


def transfer_of(phi):
    return np.array([[np.trace(G @ unvec(phi @ vec(Gl), 2)).real for Gl in BASIS.ops] for G in BASIS.ops])


def test_transfer_of_identity():
    F = transfer_matrix(unitary_map(np.zeros((2, 2)), 0.1, 5))
    assert np.allclose(F.F, np.eye(4), atol=1e-15)


def test_transfer_of_sigma_x_conjugation():
    maps = np.stack([np.eye(4), sprepost(SIGMA_X, SIGMA_X)])
    F = transfer_matrix(MapSeries(2, 0.1, maps))
    assert np.allclose(F.F[1], np.diag([1.0, 1.0, -1.0, -1.0]), atol=1e-15)


def test_transfer_matches_operator_sum(rng):
    # oracle: F_kl = sum_K Tr[G_k K G_l K^dag] without the superoperator
    kraus = random_kraus(rng)
    series = MapSeries(2, 0.1, np.stack([np.eye(4), kraus_superop(kraus)]))
    F = transfer_matrix(series).F[1]
    direct = np.array([
        [sum(np.trace(Gk @ K @ Gl @ K.conj().T) for K in kraus).real for Gl in BASIS.ops] for Gk in BASIS.ops
    ])
    assert np.abs(F - direct).max() < 1e-12


def test_transfer_rejects_non_trace_preserving():
    maps = np.stack([np.eye(4), 0.5 * np.eye(4)])
    with pytest.raises(InvariantViolationError):
        transfer_matrix(MapSeries(2, 0.1, maps))


def test_time_derivative_is_fourth_order_inside():
    errs = []
    for dt in (0.1, 0.05):
        t = dt * np.arange(41)
        errs.append(np.abs(time_derivative(np.sin(t), dt) - np.cos(t))[2:-2].max())
    assert errs[0] / errs[1] > 14


def test_time_derivative_exact_on_quadratics():
    t = 0.1 * np.arange(9)
    y = 3 * t**2 - t + 2
    assert np.allclose(time_derivative(y, 0.1), 6 * t - 1, atol=1e-12)


def test_time_derivative_off_centre_rows_exact_on_quartics():
    t = 0.1 * np.arange(9)
    dy = time_derivative(t**4, 0.1)
    assert np.allclose(dy[[1, -2]], 4 * t[[1, -2]] ** 3, atol=1e-12)


def test_time_derivative_needs_five_points():
    with pytest.raises(DomainError):
        time_derivative(np.zeros(4), 0.1)


def test_generator_of_constant_map_is_zero():
    B = generator(transfer_matrix(unitary_map(np.zeros((2, 2)), 0.05, 10)))
    assert np.abs(B.B).max() < 1e-13


def _amplitude_damping_generator():
    sm = np.array([[0, 1], [0, 0]], dtype=complex)
    return lindblad_superop(0.4 * SIGMA_X + 0.3 * SIGMA_Z, [(0.5, sm), (0.2, SIGMA_Z / np.sqrt(2))])


def test_generator_recovers_semigroup():
    L0 = _amplitude_damping_generator()
    B0 = transfer_of(L0)
    B = generator(transfer_matrix(semigroup(L0, 0.05, 40))).B
    assert np.abs(B[2:-2] - B0).max() < 1e-6
    # lower-order endpoint stencils
    assert np.abs(B[[0, -1]] - B0).max() < 1e-2


def test_generator_flags_singular_map():
    maps = np.stack([np.eye(4)] * 3 + [sprepost(np.eye(2), np.eye(2)) @ np.diag([1, 0, 0, 1])] * 3)
    with pytest.raises(IllConditionedError) as info:
        generator(transfer_matrix(MapSeries(2, 0.1, maps)))
    assert info.value.index == 3


def test_dissipator_round_trip_to_generator():
    L0 = _amplitude_damping_generator()
    B = generator(transfer_matrix(semigroup(L0, 0.05, 20)))
    D = dissipator_matrix(B)
    for n in (0, 7, 20):
        Lam = superop_from_dissipator(D.D[n], BASIS)
        assert np.abs(transfer_of(Lam) - B.B[n]).max() < 1e-10


def test_dissipator_of_zero_is_zero():
    B = GeneratorSeries(np.arange(3.0), np.zeros((3, 4, 4)), np.ones(3))
    assert np.array_equal(dissipator_matrix(B).D, np.zeros((3, 4, 4)))


def test_dissipator_rejects_non_hermitian():
    bad = np.zeros((4, 4, 4), dtype=complex)
    bad[:, 1, 2] = 1.0
    D = DissipatorSeries(np.arange(4.0), bad)
    assert D.hermiticity_deviation().max() == 1.0
    # a real B always gives a Hermitian D, so corrupt it with an imaginary entry
    Bc = np.zeros((3, 4, 4), dtype=complex)
    Bc[:, 1, 2] = 0.3j
    B = GeneratorSeries(np.arange(3.0), Bc, np.ones(3))
    with pytest.raises(ConsistencyError):
        dissipator_matrix(B)


def test_hamiltonian_of_zero_dissipator():
    D = DissipatorSeries(np.arange(2.0), np.zeros((2, 4, 4), dtype=complex))
    assert np.array_equal(extract_hamiltonian(D), np.zeros((2, 2, 2)))


def test_free_rabi_pipeline():
    res = analyze(unitary_map(SIGMA_X, 0.05, 60))
    # central stencils only produce Hamiltonian errors; the off-centre
    # stencils near the ends leak into the decoherence block
    assert np.abs(res.dissipator.D[2:-2, 1:, 1:]).max() < 1e-8
    assert np.abs(res.dissipator.D[[1, -2], 1:, 1:]).max() < 1e-5
    assert np.abs(res.dissipator.D[[0, -1], 1:, 1:]).max() < 1e-3
    assert np.abs(res.form.H[2:-2] - SIGMA_X).max() < 1e-5


def test_dephasing_structure_and_rate():
    bath = OhmicBath(0.1, 7.5, 5.0)
    eps, dt = 0.5, 0.005
    t = dt * np.arange(201)
    res = analyze(dephasing_map(bath, eps, t))
    B = res.generator.B
    # populations are conserved: the sigma_z row and column carry no rate
    assert np.abs(B[:, 3, :]).max() < 1e-12
    assert np.abs(B[:, :, 3]).max() < 1e-12
    assert np.allclose(B[:, 1, 1], B[:, 2, 2])
    gam = res.form.gammas
    big = np.argmax(np.abs(gam[100]))
    others = np.delete(gam, big, axis=1)
    assert np.abs(others).max() < 1e-10

    def rate(s):
        f = lambda w: np.exp(-w / bath.omega_c) * np.sin(w * s) / np.tanh(0.5 * bath.beta * w) if w > 0 else 0.0
        return 2 * bath.xi * quad(f, 0, 60 * bath.omega_c, limit=5000, epsabs=1e-12)[0]

    for n in (20, 60, 140, 198):
        assert abs(gam[n, big] - rate(t[n])) < 1e-6 * rate(t[n])
    assert np.abs(res.form.H[2:-2] - eps * SIGMA_Z).max() < 1e-6


def test_canonical_form_of_diagonal_block():
    D = np.zeros((5, 4, 4), dtype=complex)
    D[:, 1:, 1:] = np.diag([0.3, -0.2, 0.1])
    form = canonical_form(DissipatorSeries(np.arange(5.0), D), np.zeros((5, 2, 2)))
    assert np.allclose(form.gammas, [0.3, -0.2, 0.1])
    for k in range(3):
        assert np.allclose(form.lindblad_ops[0, k], BASIS.ops[k + 1])


def test_lindblad_operators_orthonormal_and_traceless(rng):
    L0 = _amplitude_damping_generator()
    form = analyze(semigroup(L0, 0.05, 10)).form
    for ops in form.lindblad_ops:
        gram = np.einsum("jab,kba->jk", ops.conj().transpose(0, 2, 1), ops)
        assert np.allclose(gram, np.eye(3), atol=1e-12)
        assert np.abs(np.trace(ops, axis1=1, axis2=2)).max() < 1e-12
    assert np.abs(form.H - form.H.conj().transpose(0, 2, 1)).max() < 1e-12


def test_tracks_follow_crossing_eigenvalues():
    # rates cross at t = 1; sorted eigenvalues would swap branches
    t = 0.1 * np.arange(21)
    D = np.zeros((21, 4, 4), dtype=complex)
    D[:, 1, 1] = t
    D[:, 2, 2] = 2 - t
    D[:, 3, 3] = 5.0
    form = canonical_form(DissipatorSeries(t, D), np.zeros((21, 2, 2)))
    k = np.argmin(np.abs(form.gammas[0]))
    assert np.allclose(form.gammas[:, k], t)
    assert np.abs(np.diff(form.gammas, axis=0)).max() <= 0.1 + 1e-12


def test_reconstruct_generator_round_trip():
    L0 = _amplitude_damping_generator()
    res = analyze(semigroup(L0, 0.05, 12))
    for n in range(13):
        Lam = reconstruct_generator(res.form, n)
        assert np.abs(transfer_of(Lam) - res.generator.B[n]).max() < 1e-10


def test_reconstruct_zero_form():
    form = CanonicalForm(np.arange(2.0), np.zeros((2, 2, 2)), np.zeros((2, 3)),
                         np.broadcast_to(BASIS.ops[1:], (2, 3, 2, 2)), np.broadcast_to(np.eye(3), (2, 3, 3)))
    assert np.array_equal(reconstruct_generator(form, 1), np.zeros((4, 4)))
    with pytest.raises(IndexError):
        reconstruct_generator(form, 2)


def test_generator_is_traceless_on_states(rng):
    form = analyze(semigroup(_amplitude_damping_generator(), 0.05, 8)).form
    Lam = reconstruct_generator(form, 4)
    for _ in range(5):
        assert abs(np.trace(unvec(Lam @ vec(random_density(rng)), 2))) < 1e-12


def test_trace_of_generator_equals_minus_d_sum_of_rates():
    res = analyze(semigroup(_amplitude_damping_generator(), 0.05, 15))
    trB = np.trace(res.generator.B, axis1=1, axis2=2)
    assert np.abs(trB + 2 * res.form.gammas.sum(axis=1)).max() < 1e-10


@st.composite
def constant_generators(draw):
    h = draw(st.lists(st.floats(-1, 1), min_size=3, max_size=3))
    rates = draw(st.lists(st.floats(0.0, 0.5), min_size=3, max_size=3))
    H = sum(c * P for c, P in zip(h, PAULI))
    return lindblad_superop(H, [(g, P / np.sqrt(2)) for g, P in zip(rates, PAULI)]), H, sorted(rates)


@given(constant_generators())
def test_semigroup_rates_and_hamiltonian_recovered(gen):
    L0, H, rates = gen
    form = analyze(semigroup(L0, 0.025, 12)).form
    assert np.allclose(np.sort(form.gammas[6]), rates, atol=1e-6)
    assert np.abs(form.H[6] - H).max() < 1e-5
