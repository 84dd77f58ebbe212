"""Acceptance battery: the ten pinned end-to-end guarantees, one line each.

Each test prints exactly one `criterion NN: PASS/FAIL (...)` line with the
measured deviations, then asserts the stated tolerance.  Run with `-s` (or
read the captured output of failures) to see the lines.

Criterion 9 is a known red: the Tikhonov filter at the pinned epsilon loses
the singular components that carry Fock structure through the smoothing
channel, so the fock round trips and most classicality certifications land
outside the pinned bounds.  The test asserts the bounds as stated and fails
with the measured values; see README for the analysis.
"""

import math

import numpy as np
import pytest
from scipy.special import eval_laguerre

from quasiphase import analysis, channels, fock, phasespace

DIM = 64
GRID_EXTENT = 5.0
GRID_STEP = 0.05
SEED = 7


def report(number: int, passed: bool, detail: str) -> str:
    line = f"criterion {number:02d}: {'PASS' if passed else 'FAIL'} ({detail})"
    print(line, flush=True)
    return line


@pytest.fixture(scope="module")
def suite_report():
    config = analysis.VerifyConfig(dim=DIM, grid_extent=GRID_EXTENT,
                                   grid_step=GRID_STEP, seed=SEED)
    return analysis.verify_suite(config)


def suite_check(report_, name):
    return next(c for c in report_.checks if c.name == name)


# --- closed forms used as independent oracles ------------------------------

def wigner_fock_closed(n: int, alphas: np.ndarray) -> np.ndarray:
    y = 4.0 * np.abs(alphas) ** 2
    return 2.0 * (-1.0) ** n * eval_laguerre(n, y) * np.exp(-y / 2.0)


def husimi_fock_closed(n: int, alphas: np.ndarray) -> np.ndarray:
    x = np.abs(alphas) ** 2
    if n == 0:
        return np.exp(-x)
    return x ** n * np.exp(-x) / math.factorial(n)


def test_criterion_01_fock_distributions_match_closed_forms():
    grid = phasespace.PhaseGrid(half_extent=GRID_EXTENT, spacing=GRID_STEP)
    alphas = grid.alphas()
    mask = np.abs(alphas) <= 2.5
    dev_w = dev_q = 0.0
    for n in range(9):
        state = fock.fock_state(n, DIM)
        w = phasespace.sample(state, "W", grid)
        q = phasespace.sample(state, "Q", grid)
        dev_w = max(dev_w, float(np.max(np.abs(
            w.values[mask] - wigner_fock_closed(n, alphas[mask])))))
        dev_q = max(dev_q, float(np.max(np.abs(
            q.values[mask] - husimi_fock_closed(n, alphas[mask])))))
    passed = dev_w <= 1e-8 and dev_q <= 1e-8
    line = report(1, passed,
                  f"n<=8, |alpha|<=2.5: max |W - Laguerre| {dev_w:.2e}, "
                  f"max |Q - Poisson| {dev_q:.2e}, tol 1e-8")
    assert passed, line


def test_criterion_02_doubling_amplifier_on_vacuum_and_parity():
    vac = fock.fock_state(0, DIM)
    out = channels.amplifier_apply(2.0, vac)
    dev_kernel = fock.trace_distance(out, fock.thermal_state(1.0, out.dim))

    dilated = channels.amplifier_dilated(2.0, vac)
    dev_dilated = fock.trace_distance(dilated,
                                      fock.thermal_state(1.0, dilated.dim))

    signs = np.where(np.arange(DIM) % 2 == 0, 1.0, -1.0)
    parity = fock.TruncatedOperator(np.diag(signs).astype(np.complex128),
                                    label="parity", hermitian_hint=True)
    # Levels below the input dim receive complete alternating sums; above
    # them the image reflects only the truncated input, so compare there.
    img = fock.crop(channels.amplifier_apply(2.0, parity,
                                             trace_tolerance=None), DIM)
    target = np.zeros((DIM, DIM), dtype=np.complex128)
    target[0, 0] = 0.5
    dev_parity = fock.trace_distance(img, fock.TruncatedOperator(target))

    passed = dev_kernel <= 1e-8 and dev_dilated <= 1e-6 and dev_parity <= 1e-8
    line = report(2, passed,
                  f"vacuum->thermal(1): kernel {dev_kernel:.2e} tol 1e-8, "
                  f"dilated {dev_dilated:.2e} tol 1e-6; "
                  f"parity->|0><0|/2: {dev_parity:.2e} tol 1e-8")
    assert passed, line


def test_criterion_03_husimi_equals_wigner_of_smoothed(suite_report):
    check = suite_check(suite_report, "husimi_equals_wigner_of_smoothed")
    passed = check.deviation <= 1e-6
    line = report(3, passed,
                  f"battery max grid |W_smoothed - Q| {check.deviation:.2e}, "
                  f"tol 1e-6")
    assert passed, line


def test_criterion_04_heat_halfstep_matches_smoothed_wigner(suite_report):
    check = suite_check(suite_report,
                        "weierstrass_halfstep_matches_smoothed_wigner")
    passed = check.deviation <= 2e-4
    line = report(4, passed,
                  f"battery interior max |weierstrass(W, 1/2) - W_smoothed| "
                  f"{check.deviation:.2e}, tol 2e-4")
    assert passed, line


def test_criterion_05_double_smoothing_routes_agree(suite_report):
    check = suite_check(suite_report, "coherent_projection_route_agreement")
    passed = check.deviation <= 1e-6
    line = report(5, passed,
                  f"three-route pairwise max {check.deviation:.2e}, tol 1e-6")
    assert passed, line


PARITY_ALPHAS = (0.0, 0.5 + 0.2j, -0.8 + 0.3j, 1.06 + 1.06j, 1.5)


def _smoothed_capped(op: fock.TruncatedOperator, work: int):
    # Crop the amplifier output at the construction dim: levels above it
    # reflect the input operator's missing tail, not the channel.
    step = channels.amplifier_apply(2.0, op, dim_out=work,
                                    trace_tolerance=None)
    return channels.attenuator_apply(0.5, step)


def test_criterion_06_smoothed_parity_kernels():
    window, work = DIM, 4 * DIM
    dev_single = dev_double = 0.0
    for alpha in PARITY_ALPHAS:
        kernel = fock.displaced_parity(alpha, work)
        once = _smoothed_capped(kernel, work)
        single = fock.crop(once, window)
        target = fock.coherent_state(alpha, window)[0]
        dev_single = max(dev_single,
                         max(0.0, 1.0 - fock.fidelity(single, target)))

        twice = _smoothed_capped(fock.crop(once, work), work)
        d = fock.displacement_matrix(alpha, window).matrix
        mixture = d @ fock.thermal_state(0.5, window).matrix @ d.conj().T
        dev_double = max(dev_double,
                         fock.trace_distance(fock.crop(twice, window),
                                             fock.TruncatedOperator(mixture)))
    passed = dev_single <= 1e-7 and dev_double <= 1e-6
    line = report(6, passed,
                  f"|alpha|<=1.5: coherent fidelity deficit {dev_single:.2e} "
                  f"tol 1e-7; displaced thermal(1/2) distance "
                  f"{dev_double:.2e} tol 1e-6")
    assert passed, line


def test_criterion_07_photon_number_laws_with_adjudication(suite_report):
    check = suite_check(suite_report, "photon_number_laws")
    rep = suite_report.discrepancies
    laws_ok = check.deviation <= 1e-7
    # The two printed alternatives must be adjudicated explicitly: the
    # scaling law holds to tolerance, the affine variants miss by 1/2.
    affine = rep.get("attenuator_affine_variant_max_residual", float("nan"))
    shift = rep.get("smoothing_unit_shift_variant_max_residual", float("nan"))
    stated = (rep.get("attenuator_scaling_law_max_residual", math.inf) <= 1e-7
              and abs(affine - 0.5) <= 1e-7 and abs(shift - 0.5) <= 1e-7)
    passed = laws_ok and stated
    line = report(7, passed,
                  f"laws max residual {check.deviation:.2e} tol 1e-7; "
                  f"affine variant residual {affine:.3f}, unit-shift variant "
                  f"residual {shift:.3f} "
                  f"(both must be ~0.5: scaling/half-shift forms hold)")
    assert passed, line


def test_criterion_08_smoothed_images_have_positive_wigner(suite_report):
    single = suite_check(suite_report, "smoothed_image_wigner_positive")
    double = suite_check(suite_report, "double_smoothed_image_wigner_positive")
    passed = single.deviation <= 1e-6 and double.deviation <= 1e-6
    line = report(8, passed,
                  f"battery min sampled W: single smoothing worst dip "
                  f"{single.deviation:.2e}, double {double.deviation:.2e}, "
                  f"tol 1e-6")
    assert passed, line


def test_criterion_09_regularized_inversion_and_certification():
    # Known red.  The smoothing channel multiplies the characteristic
    # function by exp(-|beta|^2 / 2), so Fock structure at |beta| ~ 4.8
    # sits on singular values ~1e-5; the Tikhonov filter s^2/(s^2 + eps)
    # at eps = 1e-10 halves exactly those components.  Round trips above
    # the vacuum and PSD margins of the preimages land outside the pinned
    # bounds.  Asserted as stated; the line below carries the measurements.
    work = 40
    spec = channels.smoothing_channel()
    trips = {}
    for label, n in (("vacuum", 0), ("fock1", 1), ("fock2", 2), ("fock3", 3)):
        state = fock.fock_state(n, work)
        img = channels.apply(spec, state)
        img = fock.crop(img, min(img.dim, work))
        back = channels.inverse_apply(spec, img, epsilon=1e-10)
        trips[label] = fock.trace_distance(back.operator, state)
    trips_ok = all(v <= 1e-4 for v in trips.values())

    battery = analysis.default_battery(dim=work, seed=SEED)
    verdicts = []
    for state in battery:
        # Full grown image: the check validates its input as a density
        # operator before cropping to its own working block, and cropping
        # here first would shave tail trace off the hotter thermal images.
        img = channels.apply(spec, state)
        rep = analysis.classicality_check(img, order=1, epsilon=1e-10,
                                          work_dim=work)
        verdicts.append(rep.verdict)
    certified = sum(v == "CertifiedClassical" for v in verdicts)
    verdicts_ok = certified == len(verdicts)

    passed = trips_ok and verdicts_ok
    trip_text = ", ".join(f"{k} {v:.2e}" for k, v in trips.items())
    line = report(9, passed,
                  f"round trips vs 1e-4: {trip_text}; certified "
                  f"{certified}/{len(verdicts)} smoothed battery states "
                  f"(non-thermal preimages carry filter-loss negativity)")
    assert passed, line


W_POINTS = (0.0, 0.5, 0.5 + 0.5j, 1.0j, -0.7 + 0.2j, 1.2 - 0.4j)


def test_criterion_10_independent_route_agreement():
    dev_dilated = 0.0
    for n in range(9):
        state = fock.fock_state(n, DIM)
        amp = channels.amplifier_apply(2.0, state)
        # Headroom beyond the default register heuristic: the squeezer pushes
        # the ancilla population up with the amplified photon number.
        amp_two_mode = channels.amplifier_dilated(2.0, state,
                                                  anc_dim=4 * (n + 1) + 48)
        dev_dilated = max(dev_dilated,
                          fock.trace_distance(amp, amp_two_mode))
        att = channels.attenuator_apply(0.5, state)
        att_two_mode = channels.attenuator_dilated(0.5, state)
        dev_dilated = max(dev_dilated,
                          fock.trace_distance(att, att_two_mode))
    routes_ok = dev_dilated <= 1e-6

    # Half extent 5: fock1's characteristic function is still 5e-3 on the
    # |beta| = 4 ring, which trips the quadrature boundary gate.
    betagrid = phasespace.PhaseGrid(half_extent=5.0, spacing=GRID_STEP)
    dev_w = 0.0
    for state in (fock.fock_state(1, 32),
                  fock.coherent_state(0.9, 32)[0],
                  fock.thermal_state(1.0, 32)):
        for alpha in W_POINTS:
            direct = phasespace.w_at(state, alpha)
            quad = phasespace.w_char_at(state, alpha, betagrid)
            dev_w = max(dev_w, abs(direct - quad))
    quad_ok = dev_w <= 5e-3

    kraus = channels.attenuator_kraus(0.5, DIM)
    low = 3 * DIM // 4
    total = sum(k.conj().T @ k for k in kraus.matrices)
    resid = float(np.max(np.abs(total[:low, :low] - np.eye(DIM)[:low, :low])))
    kraus_ok = resid <= 1e-10 and kraus.completeness_residual <= 1e-10

    passed = routes_ok and quad_ok and kraus_ok
    line = report(10, passed,
                  f"kernel vs dilated {dev_dilated:.2e} tol 1e-6; "
                  f"w_at vs characteristic quadrature {dev_w:.2e} tol 5e-3; "
                  f"Kraus completeness {resid:.2e} tol 1e-10")
    assert passed, line
