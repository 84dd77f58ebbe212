"""Quasiprobability distributions on square phase-space grids.

Three distributions of a truncated operator X are supported, all with the
d^2alpha/pi integration convention so that densities integrate to 1:

* Q(alpha) = <alpha| X |alpha>, bounded, vacuum peak 1;
* W(alpha) = Tr[X pi(alpha)] with the displaced parity kernel, vacuum peak 2;
* P, which is an ordinary function only for special families (Gaussian
  mixtures of coherent states, e.g. thermal); anything else raises
  SingularPError rather than pretending.

Point evaluators (`q_at`, `w_at`, `w_char_at`) are kept deliberately
independent of the vectorized grid evaluators used by `sample`, so each can
certify the other: `w_at` builds the parity kernel by padded exponentiation,
while the grid path runs stable three-term recurrences along the matrix
diagonals (all intermediates are displacement matrix elements, bounded by 1).

The Weierstrass transform `weierstrass` smooths a sampled distribution with
a Gaussian of variance t; t = 1/2 shifts P -> W -> Q one rung, t = 1 maps
P -> Q directly, and the semigroup law composes in t.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import gammaln

from .errors import (
    GridTooSmallError,
    SingularPError,
    ValidationError,
)
from .fock import DensityOperator, TruncatedOperator, displaced_parity, trim_dim

__all__ = [
    "GRID_TOLERANCE",
    "KINDS",
    "PhaseGrid",
    "QuasiDistribution",
    "GaussianP",
    "NegativityReport",
    "q_at",
    "w_at",
    "w_char_at",
    "p_thermal_at",
    "recognize_gaussian_p",
    "sample",
    "weierstrass",
    "integrate",
    "negativity",
    "distribution_to_json",
    "distribution_from_json",
    "distribution_to_csv",
]

GRID_TOLERANCE = 1e-3
KINDS = ("P", "W", "Q")


@dataclass(frozen=True)
class PhaseGrid:
    """Square lattice center + (j h - R) + i (k h - R), 0 <= j, k <= floor(2R/h)."""

    center: complex = 0j
    half_extent: float = 5.0
    spacing: float = 0.05

    def __post_init__(self):
        if not (self.spacing > 0.0):
            raise ValidationError(f"grid spacing must be positive, got {self.spacing}")
        if self.half_extent < self.spacing:
            raise ValidationError(
                f"grid half extent {self.half_extent} below spacing {self.spacing}")
        object.__setattr__(self, "center", complex(self.center))
        object.__setattr__(self, "half_extent", float(self.half_extent))
        object.__setattr__(self, "spacing", float(self.spacing))

    @property
    def points_per_axis(self) -> int:
        # tolerate float fuzz when 2R/h is an exact integer
        return int(math.floor(2.0 * self.half_extent / self.spacing + 1e-9)) + 1

    def axis_offsets(self) -> np.ndarray:
        return np.arange(self.points_per_axis) * self.spacing - self.half_extent

    def alphas(self) -> np.ndarray:
        """Complex lattice, axis 0 along Re, axis 1 along Im."""
        off = self.axis_offsets()
        return self.center + off[:, None] + 1j * off[None, :]

    def interior_mask(self, margin: float) -> np.ndarray:
        off = self.axis_offsets()
        keep = np.abs(off) <= self.half_extent - margin + 1e-12
        return keep[:, None] & keep[None, :]

    def boundary_mask(self) -> np.ndarray:
        n = self.points_per_axis
        mask = np.zeros((n, n), dtype=bool)
        mask[0, :] = mask[-1, :] = True
        mask[:, 0] = mask[:, -1] = True
        return mask


@dataclass(frozen=True, eq=False)
class QuasiDistribution:
    """Real samples of one distribution kind on a PhaseGrid."""

    grid: PhaseGrid
    kind: str
    values: np.ndarray
    source_label: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"kind must be one of {KINDS}, got {self.kind!r}")
        vals = np.array(self.values, dtype=np.float64, order="C")
        n = self.grid.points_per_axis
        if vals.shape != (n, n):
            raise ValidationError(
                f"values shape {vals.shape} does not match grid ({n}, {n})")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("distribution contains non-finite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class GaussianP:
    """Closed-form P of a displaced thermal state: (1/nbar) exp(-|a-c|^2/nbar)."""

    nbar: float
    center: complex = 0j
    weight: float = 1.0

    def value_at(self, alpha: complex) -> float:
        if self.nbar <= 0.0:
            raise SingularPError(
                "P is a delta distribution at nbar=0; no function values exist")
        y = abs(complex(alpha) - complex(self.center)) ** 2
        return self.weight * math.exp(-y / self.nbar) / self.nbar


@dataclass(frozen=True)
class NegativityReport:
    min_value: float
    negative_volume: float


def _matrix_and_hint(x) -> tuple[np.ndarray, bool]:
    if isinstance(x, DensityOperator):
        return x.matrix, True
    if isinstance(x, TruncatedOperator):
        return x.matrix, x.hermitian_hint
    raise ValidationError(f"expected an operator, got {type(x).__name__}")


def _real_guard(value: complex, hinted: bool, what: str) -> float:
    if hinted and abs(value.imag) > 1e-9 * max(1.0, abs(value.real)):
        raise ValidationError(f"{what} of a Hermitian operator has imaginary "
                              f"part {value.imag:.3e}")
    return float(value.real)


def q_at(x, alpha: complex) -> float:
    """<alpha| X |alpha> from the exact first-dim coherent amplitudes.

    The amplitudes are the exact projection of |alpha> onto the truncated
    space; no tail gate is applied here, so the value degrades gracefully to
    0 far outside the represented region instead of refusing.
    """
    mat, hinted = _matrix_and_hint(x)
    amps = _coherent_block(np.array([complex(alpha)]), mat.shape[0])[0]
    val = complex(amps.conj() @ mat @ amps)
    return _real_guard(val, hinted or True, "Husimi value")


def w_at(x, alpha: complex) -> float:
    """Tr[X pi(alpha)] with the parity kernel built by padded exponentiation."""
    mat, hinted = _matrix_and_hint(x)
    kernel = displaced_parity(alpha, mat.shape[0]).matrix
    val = complex(np.sum(mat * kernel.T))
    return _real_guard(val, hinted or True, "Wigner value")


def w_char_at(x, alpha: complex, betagrid: PhaseGrid,
              boundary_tolerance: float = 1e-3) -> float:
    """Wigner value by quadrature of the characteristic function.

    Independent of `w_at`: integrates Tr[X D(beta)] against the phase
    exp(alpha beta* - alpha* beta) over `betagrid`.  The grid must enclose
    the characteristic function's support: the largest |Tr[X D(beta)]| on
    the boundary ring must stay below `boundary_tolerance` (tuned to the
    ~5e-3 accuracy this quadrature is used for; tighten for more).
    """
    mat, hinted = _matrix_and_hint(x)
    betas = betagrid.alphas()
    chi = _displacement_trace_grid(mat, betas)
    edge = float(np.max(np.abs(chi[betagrid.boundary_mask()])))
    if edge > boundary_tolerance:
        raise GridTooSmallError(
            f"characteristic function is {edge:.3e} at the beta-grid boundary, "
            f"above {boundary_tolerance:g}; enlarge the grid",
            boundary_value=edge, tolerance=boundary_tolerance)
    alpha = complex(alpha)
    phase = np.exp(alpha * betas.conj() - np.conj(alpha) * betas)
    h = betagrid.spacing
    val = complex(np.sum(chi * phase) * (h * h / math.pi))
    return _real_guard(val, hinted or True, "Wigner quadrature value")


def p_thermal_at(nbar: float, alpha: complex) -> float:
    """Closed-form thermal P value; nbar = 0 is a delta and raises."""
    return GaussianP(float(nbar)).value_at(alpha)


def recognize_gaussian_p(x, diag_tolerance: float = 1e-12,
                         ratio_tolerance: float = 1e-10) -> GaussianP | None:
    """Detect a thermal-form matrix (diagonal, geometric) and return its P.

    Returns None when the matrix is not of that form.  A recognized q -> 0
    (vacuum-like) case is the delta limit and maps to GaussianP(0), whose
    evaluation raises SingularPError.
    """
    mat, _ = _matrix_and_hint(x)
    dim = mat.shape[0]
    off = mat - np.diag(np.diagonal(mat))
    if float(np.max(np.abs(off))) > diag_tolerance:
        return None
    diag = np.diagonal(mat).real
    if float(np.max(np.abs(np.diagonal(mat).imag))) > diag_tolerance:
        return None
    if diag[0] <= 0.0:
        return None
    if dim == 1:
        return GaussianP(0.0, weight=float(diag[0]))
    q = diag[1] / diag[0]
    if not 0.0 <= q < 1.0:
        return None
    expected = diag[0] * q ** np.arange(dim)
    if float(np.max(np.abs(diag - expected))) > ratio_tolerance:
        return None
    weight = float(diag[0] / (1.0 - q))  # total geometric mass
    nbar = float(q / (1.0 - q))
    return GaussianP(nbar, weight=weight)


def _coherent_block(alphas_flat: np.ndarray, dim: int) -> np.ndarray:
    """Rows of <n|alpha_p> for n < dim; exact truncated amplitudes."""
    y = np.abs(alphas_flat) ** 2
    out = np.empty((alphas_flat.size, dim), dtype=np.complex128)
    out[:, 0] = np.exp(-0.5 * y)
    for n in range(1, dim):
        out[:, n] = out[:, n - 1] * alphas_flat / math.sqrt(n)
    return out


def _displacement_trace_grid(mat: np.ndarray, betas) -> np.ndarray:
    """Tr[X D(beta)] for every beta, by diagonal three-term recurrences.

    chi(beta) = sum_e  u^e S_e(y) + (-u*)^e T_e(y),  u = beta/|beta|,
    with S, T weighted sums of rho_m = sqrt(m!/(m+e)!) y^(e/2) e^(-y/2)
    L_m^(e)(y); every rho_m is a displacement matrix element, so the
    recurrence never leaves [-1, 1] and cannot overflow.
    """
    betas = np.asarray(betas, dtype=np.complex128)
    shape = betas.shape
    b = betas.ravel()
    y = np.abs(b) ** 2
    dim = mat.shape[0]
    scale = float(np.max(np.abs(mat))) if mat.size else 0.0
    live = 1e-18 * max(scale, 1e-300)
    chi = np.zeros(b.size, dtype=np.complex128)
    unit = np.where(y > 0.0, b / np.where(y > 0.0, np.sqrt(y), 1.0), 1.0)
    half = np.exp(-0.5 * y)
    with np.errstate(divide="ignore"):
        log_y = np.where(y > 0.0, np.log(np.where(y > 0.0, y, 1.0)), -np.inf)
    for e in range(dim):
        upper = np.diagonal(mat, offset=e)
        lower = np.diagonal(mat, offset=-e)
        if max(np.max(np.abs(upper)), np.max(np.abs(lower))) <= live:
            continue
        if e == 0:
            rho_prev = np.zeros_like(y)
            rho = half.copy()
        else:
            rho_prev = np.zeros_like(y)
            expo = 0.5 * (e * log_y - y) - 0.5 * gammaln(e + 1)
            rho = np.exp(expo)
            rho[y == 0.0] = 0.0
        acc_u = np.zeros(b.size, dtype=np.complex128)
        acc_l = np.zeros(b.size, dtype=np.complex128)
        for m in range(dim - e):
            cu = upper[m]
            cl = lower[m]
            if cu != 0.0:
                acc_u += cu * rho
            if e > 0 and cl != 0.0:
                acc_l += cl * rho
            if m < dim - e - 1:
                coef_a = (2 * m + e + 1 - y) / math.sqrt((m + 1) * (m + e + 1))
                coef_b = math.sqrt(m * (m + e) / ((m + 1) * (m + e + 1)))
                rho, rho_prev = coef_a * rho - coef_b * rho_prev, rho
        phase = unit**e
        chi += phase * acc_u
        if e > 0:
            chi += ((-1) ** e) * phase.conj() * acc_l
    return chi.reshape(shape)


def _trim_matrix(mat: np.ndarray) -> np.ndarray:
    keep = trim_dim(mat, tol=1e-16 * max(1.0, float(np.max(np.abs(mat)))))
    return mat[:keep, :keep]


def sample(x, kind: str, grid: PhaseGrid, grid_tolerance: float = GRID_TOLERANCE,
           p_form: GaussianP | None = None) -> QuasiDistribution:
    """Evaluate one distribution of X on every grid point.

    For density inputs two invariants are enforced: Q stays within
    [-1e-10, 1 + 1e-10], and the grid quadrature reproduces the trace within
    `grid_tolerance` (raising GridTooSmallError otherwise).  P is available
    only when a closed form exists: pass one explicitly via `p_form`, or let
    the thermal form be recognized from the matrix; anything else raises
    SingularPError.
    """
    if kind not in KINDS:
        raise ValidationError(f"kind must be one of {KINDS}, got {kind!r}")
    mat, _ = _matrix_and_hint(x)
    is_density = isinstance(x, DensityOperator)
    label = getattr(x, "label", "")
    alphas = grid.alphas()
    flat = alphas.ravel()

    if kind == "Q":
        work = _trim_matrix(mat)
        block = _coherent_block(flat, work.shape[0])
        vals = np.einsum("pn,pn->p", block.conj() @ work, block)
    elif kind == "W":
        work = _trim_matrix(mat)
        signs = np.where(np.arange(work.shape[0]) % 2 == 0, 1.0, -1.0)
        chi = _displacement_trace_grid(signs[:, None] * work, 2.0 * flat)
        vals = 2.0 * chi
    else:
        form = p_form if p_form is not None else recognize_gaussian_p(x)
        if form is None:
            raise SingularPError(
                "no closed-form P available for this operator; its P "
                "distribution is singular or not a recognized Gaussian form")
        if form.nbar <= 0.0:
            raise SingularPError(
                "P is a delta distribution at nbar=0; sample W or Q instead")
        y = np.abs(flat - form.center) ** 2
        vals = form.weight * np.exp(-y / form.nbar) / form.nbar

    vals = np.asarray(vals)
    if np.iscomplexobj(vals):
        worst = float(np.max(np.abs(vals.imag)))
        if worst > 1e-9:
            raise ValidationError(
                f"sampled {kind} values carry imaginary part {worst:.3e}")
        vals = vals.real
    values = vals.reshape(alphas.shape)

    if is_density:
        if kind == "Q":
            lo, hi = float(values.min()), float(values.max())
            if lo < -1e-10 or hi > 1.0 + 1e-10:
                raise ValidationError(
                    f"Husimi samples outside [0, 1]: min {lo:.3e}, max {hi:.3e}")
        total = float(values.sum() * grid.spacing**2 / math.pi)
        target = float(np.trace(mat).real)
        if abs(total - target) > grid_tolerance:
            raise GridTooSmallError(
                f"grid quadrature of {kind} gives {total:.6g}, trace is "
                f"{target:.6g}; enlarge or refine the grid",
                boundary_value=abs(total - target), tolerance=grid_tolerance)
    return QuasiDistribution(grid=grid, kind=kind, values=values, source_label=label)


_SMOOTHED_KIND = {("P", 0.5): "W", ("W", 0.5): "Q", ("P", 1.0): "Q"}


def weierstrass(dist: QuasiDistribution, t: float,
                boundary_tolerance: float = 1e-8) -> QuasiDistribution:
    """Gaussian smoothing (1/t) integral of exp(-|a-b|^2/t) on the same grid.

    Requires the source to have decayed below `boundary_tolerance` on its
    boundary ring, since mass outside the grid is silently lost.  The kernel
    factorizes over axes, so the transform is two matrix products.
    """
    t = float(t)
    if t <= 0.0:
        raise ValidationError(f"smoothing variance must be positive, got {t}")
    edge = float(np.max(np.abs(dist.values[dist.grid.boundary_mask()])))
    if edge > boundary_tolerance:
        raise GridTooSmallError(
            f"source is {edge:.3e} at the grid boundary, above "
            f"{boundary_tolerance:g}; enlarge the grid before smoothing",
            boundary_value=edge, tolerance=boundary_tolerance)
    off = dist.grid.axis_offsets()
    kernel = np.exp(-np.subtract.outer(off, off) ** 2 / t)
    h = dist.grid.spacing
    out = (h * h / (math.pi * t)) * (kernel @ dist.values @ kernel.T)
    kind = _SMOOTHED_KIND.get((dist.kind, t), dist.kind)
    label = f"{dist.source_label}*gauss({t})" if dist.source_label else f"*gauss({t})"
    return QuasiDistribution(grid=dist.grid, kind=kind, values=out, source_label=label)


def integrate(dist: QuasiDistribution) -> float:
    """Grid quadrature with the d^2alpha/pi measure."""
    h = dist.grid.spacing
    return float(dist.values.sum() * h * h / math.pi)


def negativity(dist: QuasiDistribution) -> NegativityReport:
    """Most negative sample and total negative quadrature volume."""
    h = dist.grid.spacing
    neg = np.minimum(dist.values, 0.0)
    return NegativityReport(
        min_value=float(dist.values.min()),
        negative_volume=float(-neg.sum() * h * h / math.pi),
    )


def distribution_to_json(dist: QuasiDistribution) -> str:
    payload = {
        "kind": dist.kind,
        "grid": {
            "center_re": dist.grid.center.real,
            "center_im": dist.grid.center.imag,
            "half_extent": dist.grid.half_extent,
            "spacing": dist.grid.spacing,
        },
        "values": dist.values.tolist(),
        "source_label": dist.source_label,
    }
    return json.dumps(payload)


def distribution_from_json(text: str) -> QuasiDistribution:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"distribution JSON is malformed: {exc}") from exc
    try:
        gspec = payload["grid"]
        grid = PhaseGrid(
            center=complex(gspec["center_re"], gspec["center_im"]),
            half_extent=gspec["half_extent"],
            spacing=gspec["spacing"],
        )
        return QuasiDistribution(
            grid=grid, kind=payload["kind"],
            values=np.asarray(payload["values"], dtype=np.float64),
            source_label=str(payload.get("source_label", "")),
        )
    except KeyError as exc:
        raise ValidationError(f"distribution JSON missing key {exc}") from exc


def distribution_to_csv(dist: QuasiDistribution) -> str:
    """Row-major CSV: re_alpha, im_alpha, value with repr-exact floats."""
    out = io.StringIO()
    out.write("re_alpha,im_alpha,value\n")
    alphas = dist.grid.alphas()
    vals = dist.values
    n = dist.grid.points_per_axis
    for j in range(n):
        for k in range(n):
            a = alphas[j, k]
            out.write(f"{float(a.real)!r},{float(a.imag)!r},{float(vals[j, k])!r}\n")
    return out.getvalue()
