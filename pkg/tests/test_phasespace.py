"""Tests for grid distributions.

The two Wigner routes are independent by construction (padded-exponential
parity kernel vs diagonal recurrences vs characteristic-function quadrature)
and are cross-checked here; number-state closed forms pin both absolutely.
"""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import eval_laguerre

from quasiphase import fock
from quasiphase import phasespace as ps
from quasiphase.errors import GridTooSmallError, SingularPError, ValidationError

DESK = ps.PhaseGrid(half_extent=5.0, spacing=0.05)


def wigner_fock_oracle(n, alphas):
    y4 = 4.0 * np.abs(alphas) ** 2
    return 2.0 * (-1) ** n * np.exp(-0.5 * y4) * eval_laguerre(n, y4)


def husimi_fock_oracle(n, alphas):
    y = np.abs(alphas) ** 2
    return np.exp(-y) * y**n / math.factorial(n)


class TestPhaseGrid:
    def test_points_exact_division(self):
        assert DESK.points_per_axis == 201

    def test_points_inexact_division_floors(self):
        grid = ps.PhaseGrid(half_extent=1.0, spacing=0.3)
        assert grid.points_per_axis == 7
        assert grid.axis_offsets()[-1] == pytest.approx(0.8)

    def test_lattice_layout(self):
        grid = ps.PhaseGrid(center=1 + 2j, half_extent=1.0, spacing=0.5)
        al = grid.alphas()
        assert al.shape == (5, 5)
        assert al[0, 0] == pytest.approx(1 + 2j - 1 - 1j)
        assert al[3, 1] == pytest.approx(1 + 2j + 0.5 - 0.5j)

    def test_masks(self):
        grid = ps.PhaseGrid(half_extent=1.0, spacing=0.5)
        inner = grid.interior_mask(0.5)
        assert inner.sum() == 9
        edge = grid.boundary_mask()
        assert edge.sum() == 16

    @pytest.mark.parametrize("kwargs", [
        {"spacing": 0.0}, {"spacing": -1.0},
        {"half_extent": 0.01, "spacing": 0.05},
    ])
    def test_rejects_bad_geometry(self, kwargs):
        with pytest.raises(ValidationError):
            ps.PhaseGrid(**kwargs)


class TestDistributionType:
    def test_shape_must_match_grid(self):
        grid = ps.PhaseGrid(half_extent=1.0, spacing=0.5)
        with pytest.raises(ValidationError, match="shape"):
            ps.QuasiDistribution(grid=grid, kind="Q", values=np.zeros((3, 3)))

    def test_kind_checked(self):
        grid = ps.PhaseGrid(half_extent=1.0, spacing=0.5)
        with pytest.raises(ValidationError, match="kind"):
            ps.QuasiDistribution(grid=grid, kind="X", values=np.zeros((5, 5)))


class TestPointEvaluators:
    def test_husimi_vacuum_peak(self):
        assert ps.q_at(fock.fock_state(0, 16), 0.0) == pytest.approx(1.0, abs=1e-12)

    def test_husimi_fock_one(self):
        # e^-1 at unit intensity, 0 at the origin
        val = ps.q_at(fock.fock_state(1, 32), 1.0)
        assert val == pytest.approx(math.exp(-1.0), abs=1e-12)
        assert ps.q_at(fock.fock_state(1, 32), 0.0) == pytest.approx(0.0, abs=1e-15)

    def test_husimi_thermal_center(self):
        val = ps.q_at(fock.thermal_state(1.0, 48), 0.0)
        assert val == pytest.approx(0.5, abs=1e-10)

    def test_wigner_vacuum_peak(self):
        assert ps.w_at(fock.fock_state(0, 16), 0.0) == pytest.approx(2.0, abs=1e-10)

    def test_wigner_fock_one(self):
        assert ps.w_at(fock.fock_state(1, 32), 0.0) == pytest.approx(-2.0, abs=1e-9)
        # node of L_1(4 y) at y = 1/4
        assert ps.w_at(fock.fock_state(1, 32), 0.5) == pytest.approx(0.0, abs=1e-9)

    def test_quadrature_route_vacuum(self):
        grid = ps.PhaseGrid(half_extent=4.0, spacing=0.05)
        val = ps.w_char_at(fock.fock_state(0, 16), 0.0, grid)
        assert val == pytest.approx(2.0, abs=5e-3)

    def test_quadrature_route_agrees_with_parity_route(self):
        # support-8 states keep a visible characteristic tail; R=7.5 clears it
        grid = ps.PhaseGrid(half_extent=7.5, spacing=0.05)
        state = fock.random_density(32, rank=3, support=8, rng=3)
        for alpha in (0.0, 0.7, -0.4 + 0.9j, 1.5j):
            assert ps.w_char_at(state, alpha, grid) == pytest.approx(
                ps.w_at(state, alpha), abs=5e-3)

    def test_quadrature_route_boundary_guard(self):
        grid = ps.PhaseGrid(half_extent=2.0, spacing=0.05)
        with pytest.raises(GridTooSmallError):
            ps.w_char_at(fock.fock_state(0, 16), 0.0, grid)

    def test_thermal_p_values(self):
        assert ps.p_thermal_at(0.5, 0.0) == pytest.approx(2.0, abs=1e-12)
        assert ps.p_thermal_at(1.0, 1.0) == pytest.approx(math.exp(-1.0), abs=1e-12)

    def test_thermal_p_delta_limit(self):
        with pytest.raises(SingularPError):
            ps.p_thermal_at(0.0, 0.3)


class TestRecognizeGaussianP:
    def test_thermal_recognized(self):
        form = ps.recognize_gaussian_p(fock.thermal_state(0.8, 48))
        assert form is not None
        assert form.nbar == pytest.approx(0.8, abs=1e-12)
        assert form.weight == pytest.approx(1.0, abs=1e-9)

    def test_vacuum_is_delta(self):
        form = ps.recognize_gaussian_p(fock.fock_state(0, 8))
        assert form is not None and form.nbar == 0.0

    @pytest.mark.parametrize("state", [
        fock.fock_state(1, 16),
        fock.coherent_state(0.7, 32)[0],
        fock.random_density(16, rank=2, support=5, rng=0),
    ])
    def test_non_thermal_not_recognized(self, state):
        assert ps.recognize_gaussian_p(state) is None


class TestSample:
    @pytest.mark.parametrize("n", [0, 1, 3])
    def test_wigner_fock_closed_form(self, n):
        dist = ps.sample(fock.fock_state(n, 64), "W", DESK)
        assert np.max(np.abs(dist.values - wigner_fock_oracle(n, DESK.alphas()))) < 1e-10

    @pytest.mark.parametrize("n", [0, 2])
    def test_husimi_fock_closed_form(self, n):
        dist = ps.sample(fock.fock_state(n, 64), "Q", DESK)
        assert np.max(np.abs(dist.values - husimi_fock_oracle(n, DESK.alphas()))) < 1e-10

    def test_husimi_peak_and_bounds(self):
        dist = ps.sample(fock.fock_state(0, 32), "Q", DESK)
        peak = np.unravel_index(dist.values.argmax(), dist.values.shape)
        assert DESK.alphas()[peak] == pytest.approx(0.0)
        assert dist.values.max() == pytest.approx(1.0, abs=1e-12)
        assert dist.values.min() >= -1e-10

    def test_wigner_grid_certified_against_point_route(self):
        state = fock.random_density(48, rank=3, support=10, rng=9)
        dist = ps.sample(state, "W", DESK)
        al = DESK.alphas()
        for idx in [(0, 0), (100, 100), (35, 160), (73, 12), (200, 200), (140, 95)]:
            assert dist.values[idx] == pytest.approx(ps.w_at(state, al[idx]), abs=1e-8)

    def test_thermal_p_sampling_normalizes(self):
        dist = ps.sample(fock.thermal_state(1.0, 64), "P", DESK)
        assert ps.integrate(dist) == pytest.approx(1.0, abs=1e-4)
        assert dist.kind == "P"

    def test_p_of_number_state_is_singular(self):
        with pytest.raises(SingularPError):
            ps.sample(fock.fock_state(1, 16), "P", DESK)

    def test_p_of_vacuum_is_delta(self):
        with pytest.raises(SingularPError):
            ps.sample(fock.fock_state(0, 16), "P", DESK)

    def test_explicit_displaced_thermal_form(self):
        form = ps.GaussianP(nbar=0.5, center=1.0)
        dist = ps.sample(fock.fock_state(0, 4), "P", DESK, p_form=form)
        al = DESK.alphas()
        assert_allclose(dist.values, 2.0 * np.exp(-2.0 * np.abs(al - 1.0) ** 2),
                        atol=1e-12)

    def test_quadrature_invariant_catches_small_grid(self):
        tight = ps.PhaseGrid(half_extent=2.0, spacing=0.05)
        with pytest.raises(GridTooSmallError):
            ps.sample(fock.thermal_state(1.5, 64), "W", tight)

    def test_raw_operator_skips_density_invariants(self):
        op = fock.TruncatedOperator(2.0 * fock.fock_state(1, 24).matrix,
                                    hermitian_hint=True)
        tight = ps.PhaseGrid(half_extent=2.0, spacing=0.1)
        dist = ps.sample(op, "Q", tight)  # trace 2, small grid: no raise
        assert np.isfinite(dist.values).all()

    def test_rejects_unknown_kind(self):
        with pytest.raises(ValidationError):
            ps.sample(fock.fock_state(0, 8), "R", DESK)


class TestWeierstrass:
    def test_half_step_takes_thermal_p_to_wigner(self):
        grid = ps.PhaseGrid(half_extent=6.0, spacing=0.05)
        dist = ps.sample(fock.thermal_state(1.0, 64), "P", grid)
        out = ps.weierstrass(dist, 0.5)
        ref = (2.0 / 3.0) * np.exp(-2.0 * np.abs(grid.alphas()) ** 2 / 3.0)
        assert np.max(np.abs(out.values - ref)) < 1e-10
        assert out.kind == "W"

    def test_half_step_takes_wigner_to_husimi(self):
        grid = ps.PhaseGrid(half_extent=6.0, spacing=0.05)
        dist = ps.sample(fock.fock_state(0, 16), "W", grid)
        out = ps.weierstrass(dist, 0.5)
        ref = ps.sample(fock.fock_state(0, 16), "Q", grid)
        assert np.max(np.abs(out.values - ref.values)) < 1e-6
        assert out.kind == "Q"

    def test_semigroup_two_half_steps_equal_one_full(self):
        grid = ps.PhaseGrid(half_extent=6.0, spacing=0.05)
        start = ps.sample(fock.thermal_state(1.0, 64), "P", grid)
        twice = ps.weierstrass(ps.weierstrass(start, 0.5), 0.5)
        once = ps.weierstrass(start, 1.0)
        inner = grid.interior_mask(2.0)
        assert np.max(np.abs(twice.values - once.values)[inner]) < 2e-4
        assert once.kind == "Q"

    def test_boundary_decay_guard(self):
        # thermal 1.5 is ~2e-6 at the R=5 boundary, above the 1e-8 gate
        dist = ps.sample(fock.thermal_state(1.5, 64), "W", DESK)
        with pytest.raises(GridTooSmallError):
            ps.weierstrass(dist, 0.5)

    def test_rejects_nonpositive_variance(self):
        dist = ps.sample(fock.fock_state(0, 8), "W", DESK)
        with pytest.raises(ValidationError):
            ps.weierstrass(dist, 0.0)

    def test_offrung_variance_keeps_kind(self):
        grid = ps.PhaseGrid(half_extent=6.0, spacing=0.05)
        dist = ps.sample(fock.fock_state(0, 8), "W", grid)
        assert ps.weierstrass(dist, 0.3).kind == "W"


class TestIntegralsAndNegativity:
    def test_husimi_integrates_to_trace(self):
        dist = ps.sample(fock.fock_state(0, 16), "Q", DESK)
        assert ps.integrate(dist) == pytest.approx(1.0, abs=1e-5)

    def test_wigner_integrates_to_trace(self):
        dist = ps.sample(fock.fock_state(1, 32), "W", DESK)
        assert ps.integrate(dist) == pytest.approx(1.0, abs=1e-4)

    def test_zero_distribution(self):
        grid = ps.PhaseGrid(half_extent=1.0, spacing=0.5)
        dist = ps.QuasiDistribution(grid=grid, kind="W", values=np.zeros((5, 5)))
        assert ps.integrate(dist) == 0.0
        rep = ps.negativity(dist)
        assert rep.min_value == 0.0 and rep.negative_volume == 0.0

    def test_fock_one_negativity(self):
        # negative lobe of 2 e^-2y (4y - 1) integrates to 2 e^-1/2 - 1;
        # the clipped integrand has a kink, so quadrature is O(h^2) here
        dist = ps.sample(fock.fock_state(1, 32), "W", DESK)
        rep = ps.negativity(dist)
        assert rep.min_value == pytest.approx(-2.0, abs=1e-9)
        assert rep.negative_volume == pytest.approx(2.0 * math.exp(-0.5) - 1.0, abs=5e-4)

    def test_husimi_never_negative(self):
        state = fock.random_density(32, rank=3, support=8, rng=4)
        rep = ps.negativity(ps.sample(state, "Q", DESK))
        assert rep.min_value >= -1e-10
        assert rep.negative_volume <= 1e-8

    def test_coherent_wigner_positive(self):
        state, _ = fock.coherent_state(0.9, 64)
        rep = ps.negativity(ps.sample(state, "W", DESK))
        assert rep.min_value >= -1e-10
        assert rep.negative_volume <= 1e-8


class TestSerialization:
    def test_json_roundtrip_bit_exact(self):
        dist = ps.sample(fock.fock_state(1, 16), "W",
                         ps.PhaseGrid(half_extent=2.0, spacing=0.25))
        text = ps.distribution_to_json(dist)
        back = ps.distribution_from_json(text)
        assert np.array_equal(back.values, dist.values)
        assert back.grid == dist.grid
        assert back.kind == dist.kind
        assert ps.distribution_to_json(back) == text

    def test_csv_layout_and_exact_floats(self):
        grid = ps.PhaseGrid(half_extent=0.5, spacing=0.5)
        dist = ps.sample(fock.fock_state(0, 8), "Q", grid, grid_tolerance=10.0)
        text = ps.distribution_to_csv(dist)
        lines = text.strip().split("\n")
        assert lines[0] == "re_alpha,im_alpha,value"
        assert len(lines) == 1 + 9
        re0, im0, v0 = lines[1].split(",")
        assert float(re0) == -0.5 and float(im0) == -0.5
        assert float(v0) == dist.values[0, 0]

    def test_json_rejects_garbage(self):
        with pytest.raises(ValidationError):
            ps.distribution_from_json("]")
        with pytest.raises(ValidationError):
            ps.distribution_from_json("{}")
