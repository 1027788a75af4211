import math

import numpy as np
import pytest

import oracles
from ssmc.errors import DomainError, ExponentDiverges, HorizonTooShort, Indeterminate, TailUnbounded
from ssmc.kernels import BesselWalk, FragCoag, RareJumpDrift
from ssmc.levy import (
    Density,
    JumpMeasure,
    LevyTriplet,
    char_exponent,
    classify_drift,
    cumulative_functional,
    deterministic_path,
    exponential_functional,
    fragcoag_triplet,
    lamperti_transform,
    laplace_exponent,
    mean_at_one,
    sample_exponential_functional,
    sample_lamperti_marginals,
    simulate_path,
    triplet_from_config,
)
from ssmc.stats import ks_one_sample, ks_two_sample

BESSEL3 = LevyTriplet(sigma2=1.0, b=-2.0, gamma=2.0)
RAREJUMP = RareJumpDrift(1.0, 0.5).limit_triplet()
FRAG = FragCoag(lam_atoms=((0.5, 1.0),)).limit_triplet()


def test_laplace_exponent_examples():
    assert laplace_exponent(BESSEL3, 2.0) == pytest.approx(-2.0, abs=1e-14)
    assert laplace_exponent(BESSEL3, 0.0) == 0.0
    assert RAREJUMP.b == pytest.approx(-1.0 + math.log(0.5))
    assert laplace_exponent(RAREJUMP, 1.0) == pytest.approx(-1.5, abs=1e-12)


def test_char_exponent_examples():
    assert char_exponent(BESSEL3, 0.0) == 0
    assert char_exponent(LevyTriplet(b=-1.0), 2.0) == pytest.approx(-2j)
    assert char_exponent(BESSEL3, 1.0) == pytest.approx(complex(-0.5, -2.0))


@pytest.mark.parametrize("trip", [BESSEL3, RAREJUMP, FRAG, LevyTriplet(0.3, 0.7, JumpMeasure(((-2.5, 0.4), (0.3, 1.2), (1.7, 0.1))))])
def test_phi_psi_consistency(trip):
    for lam in (-1.3, -0.4, 0.25, 0.9, 1.8):
        psi = laplace_exponent(trip, lam)
        phi = _phi_at_imaginary(trip, lam)
        assert phi == pytest.approx(psi, rel=1e-10, abs=1e-14)


def _phi_at_imaginary(trip, lam):
    # Phi(-i lam) evaluated from the same Levy-Khintchine formula with complex argument
    z = -1j * lam
    jm = trip.jumps
    jump = sum(w * (np.exp(1j * z * x) - 1 - 1j * z * x * (abs(x) <= 1)) for x, w in jm.atoms)
    return (-0.5 * trip.sigma2 * z * z + 1j * trip.b * z + jump).real


def test_mean_and_drift_classification():
    assert mean_at_one(LevyTriplet(b=-1.0)) == -1.0
    assert classify_drift(LevyTriplet(b=-1.0)) == "drifts_down"
    assert mean_at_one(FRAG) == pytest.approx(1 + 4 * math.log(0.5), abs=1e-12)
    assert classify_drift(FRAG) == "drifts_down"
    assert mean_at_one(BESSEL3) == -2.0
    assert classify_drift(LevyTriplet(b=0.0)) == "oscillates"
    assert classify_drift(LevyTriplet(b=5e-11)) == "oscillates"
    assert classify_drift(BesselWalk(-3).limit_triplet()) == "drifts_up"


def test_mean_indeterminate_for_two_heavy_tails():
    heavy = lambda x: abs(x) ** -2.0  # noqa: E731
    jm = JumpMeasure(densities=(Density(-math.inf, -1.5, heavy), Density(1.5, math.inf, heavy)))
    with pytest.raises(Indeterminate):
        mean_at_one(LevyTriplet(b=0.0, jumps=jm))


def test_jump_measure_validation():
    with pytest.raises(DomainError):
        JumpMeasure(((1.0, 1.0),))
    with pytest.raises(DomainError):
        JumpMeasure(((-1.0, 1.0),))
    with pytest.raises(DomainError):
        JumpMeasure(((0.5, -1.0),))
    with pytest.raises(DomainError):
        JumpMeasure(densities=(Density(0.0, 0.5, lambda x: x**-3.5),))


def test_exponent_diverges_outside_domain():
    beta = FragCoag(lam_beta=(2.0, 1.5, 1.0)).limit_triplet()
    laplace_exponent(beta, -1.0)
    with pytest.raises(ExponentDiverges):
        laplace_exponent(beta, -1.6)


def test_fragcoag_triplet_matches_laplace_transform():
    # Psi(lam) = m lam + int ((1-x)^lam - 1) x^-2 Lambda(dx) for mu(N) = 1
    for lam in (0.5, 1.0, 2.0):
        assert laplace_exponent(FRAG, lam) == pytest.approx(lam + 4 * (0.5**lam - 1), abs=1e-12)
    assert laplace_exponent(FRAG, 1.0) == pytest.approx(-1.0)


def test_fragcoag_beta_triplet_against_quadrature():
    from scipy import integrate

    a, b = 2.5, 2.0
    trip = FragCoag(lam_beta=(a, b, 1.0)).limit_triplet()
    lognorm = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    for lam in (0.5, 1.5):
        ref = lam + integrate.quad(
            lambda x: ((1 - x) ** lam - 1) * x ** (a - 3) * (1 - x) ** (b - 1) * math.exp(lognorm), 0, 1
        )[0]
        assert laplace_exponent(trip, lam) == pytest.approx(ref, rel=1e-8)


def test_deterministic_path_is_exact():
    trip = LevyTriplet(b=-1.0)
    path = simulate_path(trip, 0.01, 3.0, rng=1)
    assert np.allclose(path.values, -path.times, atol=1e-12)
    assert path.values[0] == 0.0


def test_brownian_variance():
    trip = LevyTriplet(sigma2=1.0, b=0.0)
    rng = np.random.default_rng(5)
    ends = np.array([simulate_path(trip, 0.05, 1.0, rng=rng).values[-1] for _ in range(10_000)])
    assert ends.var() == pytest.approx(1.0, abs=0.03 * 1.5)


def test_compound_poisson_mean():
    trip = LevyTriplet(b=0.0, jumps=JumpMeasure(((-math.log(2.0), 1.0),)))
    rng = np.random.default_rng(9)
    ends = np.array([simulate_path(trip, 0.01, 1.0, rng=rng).values[-1] for _ in range(20_000)])
    half = 3.0 * ends.std() / math.sqrt(ends.size)
    assert abs(ends.mean() - mean_at_one(trip)) < half


def test_exponential_functional_closed_forms():
    path = deterministic_path(-1.0, 1e-3, 20.0)
    total, tail = exponential_functional(path, 1.0)
    assert total == pytest.approx(1 - math.exp(-20), abs=1e-12)
    assert tail == pytest.approx(math.exp(-20), rel=1e-9)
    short = deterministic_path(-1.0, 1e-3, 1.0)
    assert exponential_functional(short, 1.0)[0] == pytest.approx(1 - math.exp(-1), abs=1e-12)


def test_exponential_functional_needs_negative_psi():
    path = deterministic_path(1.0, 0.01, 1.0)
    with pytest.raises(TailUnbounded):
        exponential_functional(path, 1.0)
    with pytest.raises(TailUnbounded):
        exponential_functional(deterministic_path(-1.0, 0.01, 1.0), 1.0, beta0=-0.5)


def test_exponential_functional_brownian_mean():
    draws = sample_exponential_functional(BESSEL3, 5000, seed=2)
    assert draws.mean() == pytest.approx(0.5, rel=0.05)


def test_lamperti_drift_path():
    path = deterministic_path(-1.0, 1e-3, 30.0)
    t = np.array([0.0, 0.1, 0.5, 0.9, 0.999, 1.2])
    lp = lamperti_transform(path, 1.0, t)
    assert lp.Y[:5] == pytest.approx(1 - t[:5], abs=1e-9)
    assert lp.Y[5] == 0.0 and math.isinf(lp.tau[5])
    assert lp.tau[1] == pytest.approx(-math.log(0.9), abs=1e-9)
    assert np.all(np.diff(lp.cumulative) >= 0)


def test_lamperti_horizon_too_short():
    path = deterministic_path(-1.0, 1e-2, 2.0)
    with pytest.raises(HorizonTooShort):
        lamperti_transform(path, 1.0, [0.95])


def test_tau_inversion_identity():
    path = simulate_path(LevyTriplet(sigma2=1.0, b=-0.5), 1e-3, 5.0, rng=4)
    cum = cumulative_functional(path.values, 1.0, path.dt)
    t = np.linspace(0, 0.95 * cum[-1], 40)
    lp = lamperti_transform(path, 1.0, t)
    for tj, tau in zip(t, lp.tau):
        i = min(int(tau / path.dt), len(cum) - 2)
        cell = cum[i + 1] - cum[i]
        # integral up to tau by exact cumulative plus partial cell
        back = np.interp(tau, path.times, cum)
        assert abs(back - tj) <= 2 * cell


def test_lamperti_csv(tmp_path):
    path = deterministic_path(-1.0, 0.01, 10.0)
    lp = lamperti_transform(path, 1.0, [0.0, 0.5])
    f = tmp_path / "p.csv"
    lp.to_csv(f)
    lines = f.read_text().splitlines()
    assert lines[0] == "kind,t,xi_or_tau,cumulative_or_Y"
    assert lines[-1].startswith("lamperti,0.5,")


def test_limit_marginal_sampler_t0_and_reproducible():
    a = sample_lamperti_marginals(BESSEL3, [0.0, 0.2], 300, seed=3)
    b = sample_lamperti_marginals(BESSEL3, [0.0, 0.2], 300, seed=3)
    assert np.all(a[:, 0] == 1.0)
    assert np.array_equal(a, b)


def _y_from(x, t, replicas, seed, dt=2e-3, T=14.0):
    """Y started at x, built directly from xi shifted by ln x."""
    rng = np.random.default_rng(seed)
    out = np.empty(replicas)
    for i in range(replicas):
        path = simulate_path(BESSEL3, dt, T, rng=rng)
        path.values = path.values + math.log(x)
        out[i] = lamperti_transform(path, BESSEL3.gamma, [t], BESSEL3).Y[0]
    return out


@pytest.mark.parametrize("r,t", [(4.0, 0.1), (0.25, 0.4)])
def test_self_similarity_of_y(r, t):
    # r^{-1/gamma} Y_1(r t) has the law of Y started from r^{-1/gamma}
    lhs = sample_lamperti_marginals(BESSEL3, [r * t], 2000, seed=21, dt=2e-3)[:, 0] / r ** (1 / BESSEL3.gamma)
    rhs = _y_from(r ** (-1 / BESSEL3.gamma), t, 2000, seed=22)
    d, p = ks_two_sample(lhs, rhs)
    assert p > 1e-3, (d, p)


def test_dufresne_small():
    draws = sample_exponential_functional(BESSEL3, 600, seed=8)
    d, p = ks_one_sample(draws, lambda x: oracles.inverse_gamma_cdf_scipy(x, 3.0))
    assert p > 1e-3


def test_triplet_config():
    t = triplet_from_config({"sigma2": 1.0, "b": -2.0, "gamma": 2.0})
    assert laplace_exponent(t, 2.0) == pytest.approx(-2.0)
    t2 = triplet_from_config(RAREJUMP.to_config())
    assert laplace_exponent(t2, 1.0) == pytest.approx(-1.5)
