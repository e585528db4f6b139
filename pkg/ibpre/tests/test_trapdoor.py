from __future__ import annotations

import math

import numpy as np
import pytest

from gaussian import sample_vec, smoothing_width, uniform_mat, uniform_vec
from params import preimage_singular_value
from trapdoor import (
    GADGET_GS_NORM,
    DecodeError,
    GTrapdoor,
    SingularTagError,
    WidthError,
    _PerturbationKey,
    _gadget_gram_schmidt,
    _perturbation_root,
    check_trapdoor,
    gadget_basis,
    gen_trapdoor,
    invert_g,
    invert_lwe,
    sample_g,
    sample_pre,
    width_floor,
)
from zq_linear import (
    DimensionMismatchError,
    IntVector,
    ZqMatrix,
    ZqVector,
    centered,
    frd_encode,
    gadget_matrix,
    mat_vec,
    vec_mat,
)

from . import factories

SMALL_Q = 17
SMALL_K = 5


def _window_solutions(observed: list[int]) -> list[int]:
    """Every s whose errors against ``observed`` all lie in [-q/4, q/4)."""

    found = []
    for s in range(SMALL_Q):
        errors = centered([(observed[j] - (1 << j) * s) % SMALL_Q for j in range(SMALL_K)], SMALL_Q)
        if all(-SMALL_Q <= 4 * int(err) < SMALL_Q for err in errors):
            found.append(s)
    return found


@pytest.fixture()
def tagged_pair(toy_params, rng):
    identity = factories.make_identity(toy_params, rng)
    tag = frd_encode(identity, toy_params.frd_poly)
    a_bar = uniform_mat(toy_params.n, toy_params.m_bar, toy_params.q, rng)
    return gen_trapdoor(toy_params, a_bar, tag, rng)


def test_gadget_basis_spans_the_kernel():
    for q in (17, 97, 1_000_003):
        basis = gadget_basis(q)
        k = basis.shape[0]
        powers = np.array([1 << j for j in range(k)], dtype=object)

        assert all(int(powers @ basis[:, i].astype(object)) % q == 0 for i in range(k))
        assert round(abs(np.linalg.det(basis.astype(np.float64)))) == q


def test_gadget_gram_schmidt_norms_are_bounded():
    _, _, diag = _gadget_gram_schmidt(1_000_003)

    assert np.all(np.abs(diag) <= GADGET_GS_NORM + 1e-9)


def test_generated_trapdoor_satisfies_relation(tagged_pair, toy_params):
    pair = tagged_pair

    assert pair.a_mat.shape == (toy_params.n, toy_params.m)
    assert check_trapdoor(pair.a_mat, pair.trapdoor)

    tampered = ZqMatrix(pair.a_mat.entries + np.eye(toy_params.n, toy_params.m, dtype=np.int64), toy_params.q)
    assert not check_trapdoor(tampered, pair.trapdoor)


def test_trapdoor_singular_value_is_within_estimate(tagged_pair, toy_params):
    s1 = np.linalg.norm(tagged_pair.trapdoor.r_mat.astype(np.float64), 2)

    estimate = preimage_singular_value(toy_params.n, toy_params.k, toy_params.m_bar, 0, toy_params.r)
    assert s1 <= estimate


def test_width_floor_matches_parameter_width(tagged_pair, toy_params):
    assert width_floor(tagged_pair.trapdoor) == pytest.approx(toy_params.s)


def test_invert_g_without_noise():
    secret = factories.zq_vector([5, 0, 16], SMALL_Q)
    observed = factories.noisy_gadget_image(secret, [0] * (3 * SMALL_K))

    s, e = invert_g(observed)

    assert s == secret
    assert e.to_ints() == [0] * (3 * SMALL_K)


def test_invert_g_agrees_with_exhaustive_search():
    rng = np.random.default_rng(21)
    for _ in range(300):
        observed = [int(x) for x in rng.integers(0, SMALL_Q, size=SMALL_K)]
        solutions = _window_solutions(observed)
        vector = factories.zq_vector(observed, SMALL_Q)
        if len(solutions) == 1:
            s, _ = invert_g(vector)
            assert s.to_ints() == solutions
        else:
            with pytest.raises(DecodeError):
                invert_g(vector)


def test_invert_g_recovers_secret_under_bounded_noise(toy_params, rng):
    q = toy_params.q
    secret = uniform_vec(toy_params.n, q, rng)
    bound = q // 20
    noise = [int(x) for x in rng.generator.integers(-bound, bound + 1, size=toy_params.nk)]

    s, e = invert_g(factories.noisy_gadget_image(secret, noise))

    assert s == secret
    assert e.to_ints() == noise


def test_invert_g_rejects_wrong_length(toy_params):
    with pytest.raises(DimensionMismatchError):
        invert_g(ZqVector.zeros(toy_params.k + 1, toy_params.q))


def test_invert_lwe_recovers_secret_and_noise(tagged_pair, toy_params, rng):
    pair = tagged_pair
    secret = uniform_vec(toy_params.n, toy_params.q, rng)
    noise = sample_vec(toy_params.m, toy_params.noise_width, rng)
    b = vec_mat(secret, pair.a_mat) + noise.mod(toy_params.q)

    s, e = invert_lwe(pair.trapdoor, pair.a_mat, b)

    assert s == secret
    assert e == noise


def test_invert_lwe_needs_invertible_tag(toy_params, rng):
    a_bar = uniform_mat(toy_params.n, toy_params.m_bar, toy_params.q, rng)
    pair = gen_trapdoor(toy_params, a_bar, ZqMatrix.zeros(toy_params.n, toy_params.n, toy_params.q), rng)

    with pytest.raises(SingularTagError):
        invert_lwe(pair.trapdoor, pair.a_mat, ZqVector.zeros(toy_params.m, toy_params.q))
    with pytest.raises(SingularTagError):
        sample_pre(pair.trapdoor, pair.a_mat, ZqVector.zeros(toy_params.n, toy_params.q), toy_params.s, rng)


def test_sample_g_hits_target(toy_params, rng):
    width = GADGET_GS_NORM * toy_params.r
    gadget = gadget_matrix(toy_params.n, toy_params.k, toy_params.q)
    for _ in range(5):
        target = uniform_vec(toy_params.n, toy_params.q, rng)
        x = sample_g(target, width, rng)
        assert x.dim == toy_params.nk
        assert mat_vec(gadget, x) == target


def test_sample_g_rejects_narrow_width(toy_params, rng):
    with pytest.raises(WidthError):
        sample_g(uniform_vec(toy_params.n, toy_params.q, rng), 1.0, rng)


def test_sample_pre_hits_target_with_short_vector(tagged_pair, toy_params, rng):
    pair = tagged_pair
    limit = toy_params.s * math.sqrt(toy_params.m)
    for _ in range(5):
        target = uniform_vec(toy_params.n, toy_params.q, rng)
        x = sample_pre(pair.trapdoor, pair.a_mat, target, toy_params.s, rng)
        assert mat_vec(pair.a_mat, x) == target
        assert x.norm() <= limit


def test_sample_pre_rejects_width_below_floor(tagged_pair, toy_params, rng):
    pair = tagged_pair
    target = uniform_vec(toy_params.n, toy_params.q, rng)

    with pytest.raises(WidthError):
        sample_pre(pair.trapdoor, pair.a_mat, target, toy_params.s / 2, rng)


def test_trapdoor_digest_tracks_r(tagged_pair):
    td = tagged_pair.trapdoor
    other = GTrapdoor(r_mat=td.r_mat + 1, tag=td.tag, r_width=td.r_width)

    assert td.digest() == GTrapdoor(r_mat=td.r_mat.copy(), tag=td.tag, r_width=td.r_width).digest()
    assert td.digest() != other.digest()


def test_invert_lwe_never_returns_a_wrong_secret(tagged_pair, toy_params, rng):
    pair = tagged_pair
    for _ in range(6):
        secret = uniform_vec(toy_params.n, toy_params.q, rng)
        noise = sample_vec(toy_params.m, toy_params.noise_width, rng)
        b = vec_mat(secret, pair.a_mat) + IntVector(noise.entries * toy_params.nk).mod(toy_params.q)
        try:
            s, _ = invert_lwe(pair.trapdoor, pair.a_mat, b)
        except DecodeError:
            continue
        assert s == secret


def test_sample_pre_spread_matches_its_width(tagged_pair, toy_params, rng):
    pair = tagged_pair
    targets = [uniform_vec(toy_params.n, toy_params.q, rng) for _ in range(100)]
    draws = np.stack(
        [sample_pre(pair.trapdoor, pair.a_mat, u, toy_params.s, rng).entries for u in targets]
    ).astype(np.float64)

    ratio = float(np.mean(draws**2)) / (toy_params.s**2 / (2 * math.pi))

    assert ratio == pytest.approx(1.0, abs=0.1)


def test_perturbation_leaves_room_for_rounding(tagged_pair, toy_params):
    td = tagged_pair.trapdoor
    r = smoothing_width(toy_params.n)
    g_width = GADGET_GS_NORM * r
    stacked = td.stacked()

    root = _perturbation_root(_PerturbationKey(td.digest(), float(toy_params.s), g_width, r, stacked))

    t = stacked.astype(np.float64)
    expected = (toy_params.s**2 - r**2) * np.eye(toy_params.m) - g_width**2 * (t @ t.T)
    assert np.allclose(root @ root.T, expected, rtol=1e-9, atol=1e-6 * toy_params.s**2)
