"""Truncated Fock-space operators and standard single-mode constructions.

Everything in this package works on an N-level truncation of the oscillator
Hilbert space.  A matrix X represents the number-basis block <m|X|n> for
m, n < N.  Truncation is never silent: constructors that can estimate their
own tail mass (coherent, thermal) either stay within the tail tolerance or
raise TruncationError with the dimension that would suffice, and unitaries
built from exponentials are synthesized on a padded space before cropping.

Conventions: the annihilation matrix has sqrt(n) on the first superdiagonal,
a[n-1, n] = sqrt(n); the displaced parity operator carries the factor 2,
pi(alpha) = 2 D(alpha) (-1)^n D(alpha)^dag, so its phase-space expectation
Tr[X pi(alpha)] is the Wigner function with vacuum peak 2.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammainc

from .errors import InvalidDimensionError, TruncationError, ValidationError

__all__ = [
    "HERMITIAN_TOLERANCE",
    "PSD_TOLERANCE",
    "TAIL_TOLERANCE",
    "TRACE_TOLERANCE",
    "TailReport",
    "TruncatedOperator",
    "DensityOperator",
    "annihilation_matrix",
    "fock_state",
    "coherent_amplitudes",
    "coherent_tail",
    "coherent_state",
    "displacement_matrix",
    "displacement_pad",
    "unitarity_defect",
    "thermal_state",
    "displaced_parity",
    "random_density",
    "as_density",
    "mean_photon",
    "trace_distance",
    "fidelity",
    "embed",
    "crop",
    "trim_dim",
    "trimmed",
    "operator_to_json",
    "operator_from_json",
]

# Default tolerances; every check that uses one accepts an override keyword.
HERMITIAN_TOLERANCE = 1e-12
PSD_TOLERANCE = 1e-10
TAIL_TOLERANCE = 1e-8
TRACE_TOLERANCE = 1e-8


def _as_square_complex(matrix) -> np.ndarray:
    arr = np.array(matrix, dtype=np.complex128, order="C")
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValidationError(f"operator matrix must be square, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise InvalidDimensionError("operator dimension must be at least 1")
    if not np.all(np.isfinite(arr.view(np.float64))):
        raise ValidationError("operator matrix contains non-finite entries")
    arr.setflags(write=False)
    return arr


def hermiticity_defect(matrix: np.ndarray) -> float:
    """Largest absolute entry of X - X^dag."""
    return float(np.max(np.abs(matrix - matrix.conj().T))) if matrix.size else 0.0


@dataclass(frozen=True)
class TailReport:
    """How much of a construction fell outside the truncated space."""

    input_dim: int
    work_dim: int
    tail_mass: float


@dataclass(frozen=True, eq=False)
class TruncatedOperator:
    """A number-basis matrix block on the first `dim` Fock levels.

    `hermitian_hint` marks operators whose exact counterpart is Hermitian;
    consumers may then fold roundoff imaginary parts of real quantities.
    The matrix is stored read-only.
    """

    matrix: np.ndarray
    label: str = ""
    hermitian_hint: bool = False

    def __post_init__(self):
        arr = _as_square_complex(self.matrix)
        object.__setattr__(self, "matrix", arr)
        if self.hermitian_hint:
            defect = hermiticity_defect(arr)
            scale = max(1.0, float(np.max(np.abs(arr))))
            if defect > 1e-10 * scale:
                raise ValidationError(
                    f"operator hinted Hermitian has defect {defect:.3e}"
                )

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def dagger(self) -> "TruncatedOperator":
        return TruncatedOperator(
            self.matrix.conj().T, label=self.label, hermitian_hint=self.hermitian_hint
        )

    def relabeled(self, label: str) -> "TruncatedOperator":
        return replace(self, label=label)


@dataclass(frozen=True, eq=False)
class DensityOperator:
    """A TruncatedOperator validated as a physical state.

    Hermitian within `hermitian_tolerance`, unit trace within
    `trace_tolerance` (truncation may shave tail mass below it), and
    positive semidefinite within `psd_tolerance`.
    """

    op: TruncatedOperator
    hermitian_tolerance: float = field(default=HERMITIAN_TOLERANCE, repr=False)
    trace_tolerance: float = field(default=TRACE_TOLERANCE, repr=False)
    psd_tolerance: float = field(default=PSD_TOLERANCE, repr=False)

    def __post_init__(self):
        mat = self.op.matrix
        defect = hermiticity_defect(mat)
        if defect > self.hermitian_tolerance * max(1.0, float(np.max(np.abs(mat)))):
            raise ValidationError(f"density matrix not Hermitian: defect {defect:.3e}")
        tr = np.trace(mat)
        if abs(tr - 1.0) > self.trace_tolerance:
            raise ValidationError(f"density matrix trace {tr:.12g} not within "
                                  f"{self.trace_tolerance:g} of 1")
        floor = float(np.min(np.linalg.eigvalsh(0.5 * (mat + mat.conj().T))))
        if floor < -self.psd_tolerance:
            raise ValidationError(f"density matrix has eigenvalue {floor:.3e} below "
                                  f"-{self.psd_tolerance:g}")

    @property
    def matrix(self) -> np.ndarray:
        return self.op.matrix

    @property
    def dim(self) -> int:
        return self.op.dim

    @property
    def label(self) -> str:
        return self.op.label


def _check_dim(dim: int) -> int:
    if not isinstance(dim, (int, np.integer)) or dim < 1:
        raise InvalidDimensionError(f"dimension must be a positive integer, got {dim!r}")
    return int(dim)


def annihilation_matrix(dim: int) -> TruncatedOperator:
    """Annihilation operator block: sqrt(n) on the first superdiagonal."""
    dim = _check_dim(dim)
    mat = np.diag(np.sqrt(np.arange(1, dim, dtype=np.float64)), k=1).astype(np.complex128)
    return TruncatedOperator(mat, label=f"annihilation(dim={dim})")


def fock_state(n: int, dim: int) -> DensityOperator:
    """Number-state projector |n><n|."""
    dim = _check_dim(dim)
    if not isinstance(n, (int, np.integer)) or n < 0 or n >= dim:
        raise InvalidDimensionError(f"fock level n={n!r} must satisfy 0 <= n < dim={dim}")
    mat = np.zeros((dim, dim), dtype=np.complex128)
    mat[n, n] = 1.0
    return as_density(TruncatedOperator(mat, label=f"fock({n})", hermitian_hint=True))


def coherent_amplitudes(alpha: complex, dim: int) -> np.ndarray:
    """Exact first-`dim` number-basis amplitudes of |alpha>.

    No tail check: the vector is the exact projection onto the truncated
    space, so its squared norm is 1 minus the Poisson tail mass.
    """
    dim = _check_dim(dim)
    alpha = complex(alpha)
    amps = np.empty(dim, dtype=np.complex128)
    amps[0] = math.exp(-0.5 * abs(alpha) ** 2)
    for n in range(1, dim):
        amps[n] = amps[n - 1] * alpha / math.sqrt(n)
    return amps


def coherent_tail(alpha: complex, dim: int) -> float:
    """Poisson tail mass of |alpha> beyond the first `dim` levels."""
    y = abs(complex(alpha)) ** 2
    if y == 0.0:
        return 0.0
    # sum_{n>=dim} e^-y y^n / n!  =  P(dim, y), the regularized lower gamma.
    return float(gammainc(dim, y))


def _required_coherent_dim(alpha: complex, tol: float) -> int:
    y = abs(complex(alpha)) ** 2
    hi = max(2, int(math.ceil(y + 12.0 * math.sqrt(y) + 25.0)))
    while coherent_tail(alpha, hi) > tol:
        hi *= 2
    lo = 1
    while lo < hi:
        mid = (lo + hi) // 2
        if coherent_tail(alpha, mid) <= tol:
            hi = mid
        else:
            lo = mid + 1
    return hi


def coherent_state(
    alpha: complex, dim: int, tail_tolerance: float = TAIL_TOLERANCE
) -> tuple[DensityOperator, TailReport]:
    """Coherent-state projector |alpha><alpha| and its truncation report."""
    dim = _check_dim(dim)
    alpha = complex(alpha)
    tail = coherent_tail(alpha, dim)
    if tail > tail_tolerance:
        need = _required_coherent_dim(alpha, tail_tolerance)
        raise TruncationError(
            f"coherent state alpha={alpha} loses tail mass {tail:.3e} at dim={dim}; "
            f"dim={need} would satisfy tolerance {tail_tolerance:g}",
            tail_mass=tail,
            required_dim=need,
        )
    amps = coherent_amplitudes(alpha, dim)
    mat = np.outer(amps, amps.conj())
    state = as_density(
        TruncatedOperator(mat, label=f"coherent({alpha})", hermitian_hint=True),
        trace_tolerance=max(TRACE_TOLERANCE, 2.0 * tail_tolerance),
    )
    return state, TailReport(input_dim=dim, work_dim=dim, tail_mass=tail)


def thermal_state(
    nbar: float, dim: int, tail_tolerance: float = TAIL_TOLERANCE
) -> DensityOperator:
    """Thermal state with mean photon number `nbar`; geometric number law."""
    dim = _check_dim(dim)
    nbar = float(nbar)
    if nbar < 0.0:
        raise ValidationError(f"thermal mean photon number must be >= 0, got {nbar}")
    if nbar == 0.0:
        return fock_state(0, dim)
    q = nbar / (nbar + 1.0)
    tail = q**dim
    if tail > tail_tolerance:
        need = int(math.ceil(math.log(tail_tolerance) / math.log(q)))
        raise TruncationError(
            f"thermal state nbar={nbar} loses tail mass {tail:.3e} at dim={dim}; "
            f"dim={need} would satisfy tolerance {tail_tolerance:g}",
            tail_mass=tail,
            required_dim=need,
        )
    probs = (1.0 - q) * q ** np.arange(dim, dtype=np.float64)
    mat = np.diag(probs).astype(np.complex128)
    return as_density(
        TruncatedOperator(mat, label=f"thermal({nbar})", hermitian_hint=True),
        trace_tolerance=max(TRACE_TOLERANCE, 2.0 * tail_tolerance),
    )


def displacement_pad(radius: float) -> int:
    """Padding levels for synthesizing D(beta) with |beta| = radius.

    The quadratic term tracks the level spread of the exponential; the +8
    floor keeps the retained-block corner at machine accuracy for small
    radius, where the quadratic alone under-pads.
    """
    return int(math.ceil(8.0 * radius * radius + 6.0 * radius)) + 8


def _displacement_padded(beta: complex, work_dim: int) -> np.ndarray:
    """Unitary D(beta) = exp(beta a^dag - beta* a) on `work_dim` levels."""
    a = np.diag(np.sqrt(np.arange(1, work_dim, dtype=np.float64)), k=1)
    gen = beta * a.T - np.conj(beta) * a  # real a, so a^dag = a.T
    herm = 1j * gen
    w, v = np.linalg.eigh(herm)
    return (v * np.exp(-1j * w)) @ v.conj().T


def displacement_matrix(beta: complex, dim: int) -> TruncatedOperator:
    """Displacement operator block, synthesized padded and cropped to `dim`.

    The padded exponential keeps the retained block accurate; check the
    result with `unitarity_defect` if the use is sensitive.
    """
    dim = _check_dim(dim)
    beta = complex(beta)
    work = dim + displacement_pad(abs(beta))
    full = _displacement_padded(beta, work)
    return TruncatedOperator(np.ascontiguousarray(full[:dim, :dim]),
                             label=f"displacement({beta})")


def unitarity_defect(op: TruncatedOperator, fraction: float = 0.75) -> float:
    """Max |(U^dag U - I)| over the low `fraction` block of a cropped unitary."""
    k = max(1, int(math.floor(op.dim * fraction)))
    g = op.matrix.conj().T @ op.matrix
    return float(np.max(np.abs(g[:k, :k] - np.eye(k))))


def displaced_parity(alpha: complex, dim: int) -> TruncatedOperator:
    """Displaced parity observable 2 D(alpha) (-1)^n D(alpha)^dag.

    Built on a padded space before cropping.  Its expectation in a state is
    the Wigner function at alpha (vacuum peak 2).  Not trace class: the
    truncated trace oscillates with dim and is reported as computed, never
    asserted.
    """
    dim = _check_dim(dim)
    alpha = complex(alpha)
    if alpha == 0.0:
        signs = np.where(np.arange(dim) % 2 == 0, 2.0, -2.0)
        return TruncatedOperator(np.diag(signs).astype(np.complex128),
                                 label="parity(0)", hermitian_hint=True)
    # Element-wise this operator equals 2 D(2 alpha) (-1)^n, so the padding
    # budget is that of a displacement at twice the radius.
    work = dim + displacement_pad(2.0 * abs(alpha))
    d = _displacement_padded(alpha, work)
    signs = np.where(np.arange(work) % 2 == 0, 2.0, -2.0)
    full = (d * signs) @ d.conj().T
    block = np.ascontiguousarray(full[:dim, :dim])
    block = 0.5 * (block + block.conj().T)  # exact operator is Hermitian
    return TruncatedOperator(block, label=f"parity({alpha})", hermitian_hint=True)


def random_density(
    dim: int, rank: int, support: int | None = None, rng: np.random.Generator | int | None = None
) -> DensityOperator:
    """Random rank-`rank` density matrix supported on the first `support` levels."""
    dim = _check_dim(dim)
    support = dim if support is None else int(support)
    if not 1 <= support <= dim:
        raise InvalidDimensionError(f"support {support} must lie in [1, dim={dim}]")
    if not 1 <= rank <= support:
        raise InvalidDimensionError(f"rank {rank} must lie in [1, support={support}]")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    g = gen.normal(size=(support, rank)) + 1j * gen.normal(size=(support, rank))
    q, _ = np.linalg.qr(g)
    w = gen.random(rank) + 0.1  # bounded away from zero so the rank is honest
    w /= w.sum()
    block = (q * w) @ q.conj().T
    mat = np.zeros((dim, dim), dtype=np.complex128)
    mat[:support, :support] = block
    return as_density(TruncatedOperator(
        mat, label=f"random(rank={rank},support={support})", hermitian_hint=True))


def as_density(op, **tolerances) -> DensityOperator:
    """Validate and wrap a matrix or TruncatedOperator as a state."""
    if isinstance(op, DensityOperator):
        return op
    if not isinstance(op, TruncatedOperator):
        op = TruncatedOperator(op)
    return DensityOperator(op, **tolerances)


def _matrix_of(x) -> np.ndarray:
    if isinstance(x, DensityOperator):
        return x.matrix
    if isinstance(x, TruncatedOperator):
        return x.matrix
    return _as_square_complex(x)


def mean_photon(x) -> float:
    """Tr[a^dag a X]; real part, with the imaginary part required to be roundoff."""
    mat = _matrix_of(x)
    diag = np.diagonal(mat)
    value = np.sum(np.arange(mat.shape[0]) * diag)
    if abs(value.imag) > 1e-9 * max(1.0, abs(value.real)):
        raise ValidationError(f"mean photon number has imaginary part {value.imag:.3e}")
    return float(value.real)


def trace_distance(x, y) -> float:
    """Half the trace norm of X - Y (operators embedded to a common dim)."""
    a, b = _matrix_of(x), _matrix_of(y)
    n = max(a.shape[0], b.shape[0])
    diff = _embedded(a, n) - _embedded(b, n)
    return 0.5 * float(np.sum(np.linalg.svd(diff, compute_uv=False)))


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (mat + mat.conj().T))
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T


def fidelity(x, y) -> float:
    """Uhlmann fidelity (Tr sqrt(sqrt(X) Y sqrt(X)))^2 for PSD inputs."""
    a, b = _matrix_of(x), _matrix_of(y)
    n = max(a.shape[0], b.shape[0])
    a, b = _embedded(a, n), _embedded(b, n)
    root = _psd_sqrt(a)
    inner = root @ b @ root
    w = np.clip(np.linalg.eigvalsh(0.5 * (inner + inner.conj().T)), 0.0, None)
    return float(np.sum(np.sqrt(w)) ** 2)


def _embedded(mat: np.ndarray, dim: int) -> np.ndarray:
    if mat.shape[0] == dim:
        return mat
    out = np.zeros((dim, dim), dtype=np.complex128)
    out[: mat.shape[0], : mat.shape[0]] = mat
    return out


def embed(op: TruncatedOperator, dim: int) -> TruncatedOperator:
    """Zero-pad an operator block up to `dim` levels."""
    dim = _check_dim(dim)
    if dim < op.dim:
        raise InvalidDimensionError(f"embed target {dim} below operator dim {op.dim}")
    return TruncatedOperator(_embedded(op.matrix, dim), label=op.label,
                             hermitian_hint=op.hermitian_hint)


def crop(op: TruncatedOperator, dim: int) -> TruncatedOperator:
    """Keep the low `dim`-level block of an operator."""
    dim = _check_dim(dim)
    if dim > op.dim:
        raise InvalidDimensionError(f"crop target {dim} above operator dim {op.dim}")
    return TruncatedOperator(np.ascontiguousarray(op.matrix[:dim, :dim]),
                             label=op.label, hermitian_hint=op.hermitian_hint)


def trim_dim(x, tol: float = 1e-14) -> int:
    """Smallest dim whose discarded rows and columns are all below `tol`."""
    mat = _matrix_of(x)
    row = np.max(np.abs(mat), axis=1)
    col = np.max(np.abs(mat), axis=0)
    live = np.nonzero(np.maximum(row, col) > tol)[0]
    return int(live[-1]) + 1 if live.size else 1


def trimmed(op: TruncatedOperator, tol: float = 1e-14) -> TruncatedOperator:
    """Crop an operator to its numerically live block."""
    return crop(op, trim_dim(op, tol))


def operator_to_json(op: TruncatedOperator) -> str:
    """Serialize to the interchange form {dim, re, im, label}.

    Floats are emitted with repr (shortest exact round-trip), so
    load(save(X)) reproduces X bit for bit.
    """
    mat = _matrix_of(op)
    payload = {
        "dim": int(mat.shape[0]),
        "re": mat.real.tolist(),
        "im": mat.imag.tolist(),
        "label": str(getattr(op, "label", "")),
    }
    return json.dumps(payload)


def operator_from_json(text: str) -> TruncatedOperator:
    """Parse the interchange form produced by operator_to_json."""
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"operator JSON is malformed: {exc}") from exc
    for key in ("dim", "re", "im"):
        if key not in payload:
            raise ValidationError(f"operator JSON missing key {key!r}")
    dim = payload["dim"]
    re = np.asarray(payload["re"], dtype=np.float64)
    im = np.asarray(payload["im"], dtype=np.float64)
    if re.shape != (dim, dim) or im.shape != (dim, dim):
        raise ValidationError(
            f"operator JSON parts have shapes {re.shape} and {im.shape}, "
            f"expected ({dim}, {dim})")
    return TruncatedOperator(re + 1j * im, label=str(payload.get("label", "")))
