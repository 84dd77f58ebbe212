"""Quantum-limited amplifier and attenuator channels on truncated operators.

Channel specs are small frozen dataclasses (hence hashable and cacheable)
with a JSON form for the CLI.  Composition applies right to left, so
Compose((Attenuator(1/2), Amplifier(2))) amplifies first; that particular
composition is the canonical smoothing channel returned by
`smoothing_channel()`: it shifts P -> W -> Q one rung per application.

Each channel has two independent realizations that the test suite plays
against each other:

* a closed-form number-basis shell kernel (`amplifier_apply`,
  `attenuator_apply`), organized so every weight is the square root of a
  probability and cannot overflow;
* a physical dilation (`amplifier_dilated`, `attenuator_dilated`): a
  two-mode squeezer/beamsplitter acting on a vacuum ancilla, realized by a
  sparse generator and Krylov exponential action, with the ancilla traced
  out afterwards.

Trace bookkeeping: amplification grows support, so outputs default to a
padded dimension; a PSD input that still loses trace beyond tolerance
raises TraceLeakError (non-trace-class inputs like the parity operator are
exempt, their truncated trace legitimately moves).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np
from scipy.sparse import csr_matrix, diags, kron
from scipy.sparse.linalg import expm_multiply
from scipy.special import gammaln

from .errors import (
    AncillaTailError,
    IllConditionedInverseError,
    TraceLeakError,
    ValidationError,
)
from .fock import (
    TruncatedOperator,
    hermiticity_defect,
    trace_distance,
    trim_dim,
)
from .phasespace import PhaseGrid, _coherent_block

__all__ = [
    "Amplifier",
    "Attenuator",
    "Compose",
    "AdditiveNoise",
    "Inverse",
    "ChannelSpec",
    "smoothing_channel",
    "additive_noise_expansion",
    "spec_to_json",
    "spec_from_json",
    "amplifier_apply",
    "attenuator_apply",
    "attenuator_kraus",
    "amplifier_dilated",
    "attenuator_dilated",
    "apply",
    "coherent_projection",
    "KrausSet",
    "Superoperator",
    "superoperator_of",
    "inverse_apply",
    "InverseResult",
    "channel_diagnostics",
]

KRAUS_TOLERANCE = 1e-10


@dataclass(frozen=True)
class Amplifier:
    kappa: float

    def __post_init__(self):
        if not self.kappa >= 1.0:
            raise ValidationError(f"amplifier gain must be >= 1, got {self.kappa}")
        object.__setattr__(self, "kappa", float(self.kappa))


@dataclass(frozen=True)
class Attenuator:
    transmissivity: float

    def __post_init__(self):
        if not 0.0 <= self.transmissivity <= 1.0:
            raise ValidationError(
                f"attenuator transmissivity must lie in [0, 1], got {self.transmissivity}")
        object.__setattr__(self, "transmissivity", float(self.transmissivity))


@dataclass(frozen=True)
class Compose:
    """Channels applied right to left: the last item acts first."""

    items: tuple

    def __post_init__(self):
        items = tuple(self.items)
        if not items:
            raise ValidationError("compose needs at least one channel")
        for item in items:
            if not isinstance(item, (Amplifier, Attenuator, Compose, AdditiveNoise, Inverse)):
                raise ValidationError(f"not a channel spec: {item!r}")
        object.__setattr__(self, "items", items)


@dataclass(frozen=True)
class AdditiveNoise:
    """Additive Gaussian noise of strength E >= 0 quanta."""

    noise: float

    def __post_init__(self):
        if not self.noise >= 0.0:
            raise ValidationError(f"noise strength must be >= 0, got {self.noise}")
        object.__setattr__(self, "noise", float(self.noise))


@dataclass(frozen=True)
class Inverse:
    """Regularized inverse of a forward channel."""

    inner: "ChannelSpec"
    epsilon: float = 1e-10

    def __post_init__(self):
        if not self.epsilon > 0.0:
            raise ValidationError(f"inverse epsilon must be positive, got {self.epsilon}")


ChannelSpec = Union[Amplifier, Attenuator, Compose, AdditiveNoise, Inverse]


def smoothing_channel() -> Compose:
    """Amplify by 2, then attenuate by 1/2: one P -> W -> Q rung per pass."""
    return Compose((Attenuator(0.5), Amplifier(2.0)))


def additive_noise_expansion(spec: AdditiveNoise) -> Compose:
    """AdditiveNoise(E) as attenuate-by-1/(E+1) first, then amplify-by-(E+1).

    The order matters: this factor order adds exactly E quanta to the mean
    photon number; the reverse order adds only E/(E+1).
    """
    gain = spec.noise + 1.0
    return Compose((Amplifier(gain), Attenuator(1.0 / gain)))


def spec_to_json(spec: ChannelSpec) -> str:
    return json.dumps(_spec_payload(spec))


def _spec_payload(spec: ChannelSpec) -> dict:
    if isinstance(spec, Amplifier):
        return {"kind": "amplifier", "kappa": spec.kappa}
    if isinstance(spec, Attenuator):
        return {"kind": "attenuator", "lambda": spec.transmissivity}
    if isinstance(spec, Compose):
        return {"kind": "compose", "items": [_spec_payload(i) for i in spec.items]}
    if isinstance(spec, AdditiveNoise):
        return {"kind": "additive_noise", "noise": spec.noise}
    if isinstance(spec, Inverse):
        return {"kind": "inverse", "inner": _spec_payload(spec.inner),
                "epsilon": spec.epsilon}
    raise ValidationError(f"not a channel spec: {spec!r}")


def spec_from_json(text: str) -> ChannelSpec:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"channel JSON is malformed: {exc}") from exc
    return _spec_from_payload(payload)


def _spec_from_payload(payload) -> ChannelSpec:
    if not isinstance(payload, dict) or "kind" not in payload:
        raise ValidationError(f"channel spec needs a 'kind' key, got {payload!r}")
    kind = payload["kind"]
    try:
        if kind == "amplifier":
            return Amplifier(payload["kappa"])
        if kind == "attenuator":
            return Attenuator(payload["lambda"])
        if kind == "compose":
            return Compose(tuple(_spec_from_payload(p) for p in payload["items"]))
        if kind == "additive_noise":
            return AdditiveNoise(payload["noise"])
        if kind == "inverse":
            return Inverse(_spec_from_payload(payload["inner"]),
                           epsilon=payload.get("epsilon", 1e-10))
    except KeyError as exc:
        raise ValidationError(f"channel spec {kind!r} missing field {exc}") from exc
    raise ValidationError(f"unknown channel kind {kind!r}")


def _as_operator(x) -> TruncatedOperator:
    if isinstance(x, TruncatedOperator):
        return x
    if hasattr(x, "op"):
        return x.op
    return TruncatedOperator(np.asarray(x, dtype=np.complex128))


def _looks_psd(mat: np.ndarray) -> bool:
    scale = max(1.0, float(np.max(np.abs(mat))))
    if hermiticity_defect(mat) > 1e-8 * scale:
        return False
    floor = float(np.min(np.linalg.eigvalsh(0.5 * (mat + mat.conj().T))))
    return floor >= -1e-6 * scale


def _shell_vector(j: int, length: int, log_kappa: float, log_ratio: float) -> np.ndarray:
    """g_j(m) = sqrt(binom(j+m, j) kappa^-m ratio^j); g^2 is a probability."""
    m = np.arange(length, dtype=np.float64)
    log_binom = gammaln(j + m + 1.0) - gammaln(m + 1.0) - gammaln(j + 1.0)
    return np.exp(0.5 * (log_binom - m * log_kappa + j * log_ratio))


def _amplifier_grown_dim(kappa: float, live: int, target: float = 1e-10) -> int:
    """Output dim sized so the discarded shell mass stays below `target`.

    Shell j acting on occupied level m <= live-1 contributes at most
    binom(j+live-1, live-1) ((kappa-1)/kappa)^j to the output at level j+m,
    so the search walks j until that bound (plus a geometric remainder
    margin) drops under the target.
    """
    if kappa == 1.0:
        return live
    ratio = (kappa - 1.0) / kappa
    cutoff = target * (1.0 - ratio) / 4.0
    log_ratio = math.log(ratio)
    lo, depth = 1, None
    while depth is None and lo < 1 << 20:
        j = np.arange(lo, lo + 4096, dtype=np.float64)
        bound = (gammaln(j + live) - gammaln(live) - gammaln(j + 1.0)
                 + j * log_ratio)
        hits = np.nonzero(bound <= math.log(cutoff))[0]
        if hits.size:
            depth = lo + int(hits[0])
        lo += 4096
    if depth is None:
        raise ValidationError(
            f"cannot bound amplifier({kappa}) growth for live dim {live}")
    return max(int(math.ceil(kappa * live)) + 10, live + depth + 1)


def _amplifier_default_dim(kappa: float, mat: np.ndarray,
                           target: float = 1e-10) -> int:
    live = trim_dim(mat, 1e-14 * max(1.0, float(np.max(np.abs(mat))))) if mat.size else 1
    if kappa == 1.0:
        return mat.shape[0]
    return _amplifier_grown_dim(kappa, live, target)


def amplifier_apply(kappa: float, x, dim_out: int | None = None,
                    trace_tolerance: float = 1e-8) -> TruncatedOperator:
    """Closed-form amplifier action, shell by shell.

    Output entries live on shifted diagonals (j+m, j+n); each shell is a
    rank-separable weight on the input block.  The default output dim pads
    the kappa-fold image of the live block until the geometric shell factor
    is negligible.  PSD inputs that still lose more than `trace_tolerance`
    trace raise TraceLeakError naming the deficit.
    """
    spec = Amplifier(kappa)
    kappa = spec.kappa
    op = _as_operator(x)
    mat = op.matrix
    dim_in = mat.shape[0]
    if dim_out is None:
        dim_out = _amplifier_default_dim(kappa, mat)
    if dim_out < 1:
        raise ValidationError(f"dim_out must be positive, got {dim_out}")
    if kappa == 1.0:
        out = np.zeros((dim_out, dim_out), dtype=np.complex128)
        k = min(dim_in, dim_out)
        out[:k, :k] = mat[:k, :k]
        return TruncatedOperator(out, label=f"amplifier(1.0)[{op.label}]",
                                 hermitian_hint=op.hermitian_hint)
    log_kappa = math.log(kappa)
    log_ratio = math.log((kappa - 1.0) / kappa)
    scale = max(1.0, float(np.max(np.abs(mat))))
    j_tail = (kappa - 1.0) * (dim_in + 1.0)  # past the shell-weight mode
    out = np.zeros((dim_out, dim_out), dtype=np.complex128)
    for j in range(dim_out):
        length = min(dim_in, dim_out - j)
        if length <= 0:
            break
        g = _shell_vector(j, length, log_kappa, log_ratio)
        shell = (np.outer(g, g) / kappa) * mat[:length, :length]
        out[j:j + length, j:j + length] += shell
        if j > j_tail and float(np.max(np.abs(shell))) < 1e-16 * scale:
            break
    result = TruncatedOperator(out, label=f"amplifier({kappa})[{op.label}]",
                               hermitian_hint=op.hermitian_hint)
    _check_trace_leak(mat, out, trace_tolerance, dim_out, f"amplifier({kappa})")
    return result


def _check_trace_leak(mat_in, mat_out, tolerance, dim_out, what):
    if tolerance is None or not _looks_psd(mat_in):
        return
    deficit = abs(np.trace(mat_out).real - np.trace(mat_in).real)
    if deficit > tolerance * max(1.0, abs(np.trace(mat_in).real)):
        raise TraceLeakError(
            f"{what} lost trace {deficit:.3e} at dim_out={dim_out}; "
            f"enlarge the output dimension",
            deficit=float(deficit), dim_out=dim_out)


def attenuator_apply(lam: float, x) -> TruncatedOperator:
    """Closed-form attenuator action; dimension is preserved.

    Shell j moves the (j-deep) sub-block down by j levels with weights
    binom(p+j, j) lam^p (1-lam)^j under the square root; all exact, so
    completeness holds to machine precision at every represented level.
    """
    spec = Attenuator(lam)
    lam = spec.transmissivity
    op = _as_operator(x)
    mat = op.matrix
    dim = mat.shape[0]
    label = f"attenuator({lam})[{op.label}]"
    if lam == 1.0:
        return TruncatedOperator(mat.copy(), label=label, hermitian_hint=op.hermitian_hint)
    out = np.zeros((dim, dim), dtype=np.complex128)
    if lam == 0.0:
        out[0, 0] = np.trace(mat)
        return TruncatedOperator(out, label=label, hermitian_hint=op.hermitian_hint)
    log_lam = math.log(lam)
    log_rest = math.log(1.0 - lam)
    for j in range(dim):
        length = dim - j
        g = _shell_vector(j, length, -log_lam, log_rest)
        out[:length, :length] += np.outer(g, g) * mat[j:, j:]
    return TruncatedOperator(out, label=label, hermitian_hint=op.hermitian_hint)


@dataclass(frozen=True, eq=False)
class KrausSet:
    """Operator-sum form; completeness checked on the low block."""

    dim_in: int
    dim_out: int
    matrices: tuple
    completeness_residual: float

    def __iter__(self):
        return iter(self.matrices)


def attenuator_kraus(lam: float, dim: int) -> KrausSet:
    """Kraus matrices K_j = sum_n sqrt(binom(n,j)) lam^(n-j)/2 (1-lam)^j/2 |n-j><n|."""
    spec = Attenuator(lam)
    lam = spec.transmissivity
    if dim < 1:
        raise ValidationError(f"dimension must be positive, got {dim}")
    mats: list[np.ndarray] = []
    if lam == 1.0:
        mats.append(np.eye(dim, dtype=np.complex128))
    elif lam == 0.0:
        for j in range(dim):
            k = np.zeros((dim, dim), dtype=np.complex128)
            k[0, j] = 1.0
            mats.append(k)
    else:
        log_lam, log_rest = math.log(lam), math.log(1.0 - lam)
        for j in range(dim):
            n = np.arange(j, dim, dtype=np.float64)
            log_binom = gammaln(n + 1.0) - gammaln(n - j + 1.0) - gammaln(j + 1.0)
            weights = np.exp(0.5 * (log_binom + (n - j) * log_lam + j * log_rest))
            k = np.zeros((dim, dim), dtype=np.complex128)
            k[np.arange(dim - j), np.arange(j, dim)] = weights
            mats.append(k)
    total = sum(k.conj().T @ k for k in mats)
    low = max(1, int(math.floor(0.75 * dim)))
    residual = float(np.max(np.abs(total[:low, :low] - np.eye(dim)[:low, :low])))
    if residual > KRAUS_TOLERANCE:
        raise ValidationError(
            f"attenuator Kraus completeness residual {residual:.3e} exceeds "
            f"{KRAUS_TOLERANCE:g}")
    return KrausSet(dim_in=dim, dim_out=dim, matrices=tuple(mats),
                    completeness_residual=residual)


def _amplifier_kraus(kappa: float, dim_in: int, dim_out: int) -> list[np.ndarray]:
    """Rectangular amplifier Kraus stack; shells beyond dim_out are cropped."""
    if kappa == 1.0:
        m = np.zeros((dim_out, dim_in), dtype=np.complex128)
        k = min(dim_in, dim_out)
        m[np.arange(k), np.arange(k)] = 1.0
        return [m]
    log_kappa = math.log(kappa)
    log_ratio = math.log((kappa - 1.0) / kappa)
    mats = []
    for j in range(dim_out):
        length = min(dim_in, dim_out - j)
        if length <= 0:
            break
        g = _shell_vector(j, length, log_kappa, log_ratio) / math.sqrt(kappa)
        m = np.zeros((dim_out, dim_in), dtype=np.complex128)
        m[np.arange(j, j + length), np.arange(length)] = g
        mats.append(m)
    return mats


def _sparse_mode_ops(dim: int):
    a = diags(np.sqrt(np.arange(1, dim)), 1, format="csr", dtype=np.complex128)
    return a, a.T.tocsr()


def _dilated_action(gen: csr_matrix, mat: np.ndarray, sys_dim: int, anc_dim: int,
                    tail_tolerance: float, what: str,
                    trace_tolerance: float | None) -> np.ndarray:
    """U (X (x) |0><0|) U^dag traced over the ancilla, via Krylov columns."""
    n_in = mat.shape[0]
    total = sys_dim * anc_dim
    basis = np.zeros((total, n_in), dtype=np.complex128)
    basis[np.arange(n_in) * anc_dim, np.arange(n_in)] = 1.0  # |m>|0>
    cols = expm_multiply(gen, basis)
    v = cols.reshape(sys_dim, anc_dim, n_in)
    t = np.einsum("sam,mn->san", v, mat)
    out = np.einsum("san,zan->sz", t, v.conj())
    if tail_tolerance is not None:
        anc_pop = np.einsum("san,san->a", t, v.conj()).real
        top = float(abs(anc_pop[-1]))
        scale = max(1.0, abs(float(np.trace(mat).real)))
        if top > tail_tolerance * scale:
            raise AncillaTailError(
                f"{what}: ancilla top level holds {top:.3e}; enlarge anc_dim",
                tail_mass=top)
    if trace_tolerance is not None:
        _check_trace_leak(mat, out, trace_tolerance, sys_dim, what)
    return out


def amplifier_dilated(kappa: float, x, sys_dim: int | None = None,
                      anc_dim: int | None = None,
                      tail_tolerance: float = 1e-8,
                      trace_tolerance: float = 1e-6) -> TruncatedOperator:
    """Two-mode squeezer with vacuum ancilla; the independent amplifier oracle."""
    spec = Amplifier(kappa)
    kappa = spec.kappa
    op = _as_operator(x)
    mat = op.matrix
    live = trim_dim(mat, 1e-14 * max(1.0, float(np.max(np.abs(mat)))))
    mat = mat[:live, :live]  # dead levels only waste register space
    if sys_dim is None:
        sys_dim = int(math.ceil(kappa * live)) + 40
    if anc_dim is None:
        anc_dim = int(math.ceil((kappa - 1.0) * live)) + 40
    if sys_dim < live:
        raise ValidationError(
            f"sys_dim {sys_dim} cannot hold the live input block {live}")
    r = math.acosh(math.sqrt(kappa))
    a_s, ad_s = _sparse_mode_ops(sys_dim)
    a_a, ad_a = _sparse_mode_ops(anc_dim)
    gen = (r * (kron(ad_s, ad_a) - kron(a_s, a_a))).tocsr()
    out = _dilated_action(gen, mat, sys_dim, anc_dim, tail_tolerance,
                          f"amplifier_dilated({kappa})", trace_tolerance)
    return TruncatedOperator(out, label=f"amplifier_dilated({kappa})[{op.label}]")


def attenuator_dilated(lam: float, x, sys_dim: int | None = None,
                       anc_dim: int | None = None,
                       tail_tolerance: float = 1e-8,
                       trace_tolerance: float = 1e-6) -> TruncatedOperator:
    """Beamsplitter with vacuum ancilla; photon number is conserved, so the
    default register sizes are exact."""
    spec = Attenuator(lam)
    lam = spec.transmissivity
    op = _as_operator(x)
    mat = op.matrix
    live = trim_dim(mat, 1e-14 * max(1.0, float(np.max(np.abs(mat)))))
    mat = mat[:live, :live]
    if sys_dim is None:
        sys_dim = live
    if anc_dim is None:
        anc_dim = live
    if sys_dim < live:
        raise ValidationError(
            f"sys_dim {sys_dim} cannot hold the live input block {live}")
    theta = math.acos(math.sqrt(lam))
    a_s, ad_s = _sparse_mode_ops(sys_dim)
    a_a, ad_a = _sparse_mode_ops(anc_dim)
    gen = (theta * (kron(ad_s, a_a) - kron(a_s, ad_a))).tocsr()
    # Number conservation: registers covering the live block are exact, and
    # the top ancilla level then holds legitimate population.
    tail = None if anc_dim >= live else tail_tolerance
    out = _dilated_action(gen, mat, sys_dim, anc_dim, tail,
                          f"attenuator_dilated({lam})", trace_tolerance)
    return TruncatedOperator(out, label=f"attenuator_dilated({lam})[{op.label}]")


def apply(spec: ChannelSpec, x, trim_tolerance: float = 1e-16) -> TruncatedOperator:
    """Apply any ChannelSpec with the closed-form kernels.

    Composition trims numerically dead levels between stages so amplifier
    growth does not snowball.
    """
    op = _as_operator(x)
    if isinstance(spec, Amplifier):
        return amplifier_apply(spec.kappa, op)
    if isinstance(spec, Attenuator):
        return attenuator_apply(spec.transmissivity, op)
    if isinstance(spec, AdditiveNoise):
        return apply(additive_noise_expansion(spec), op)
    if isinstance(spec, Inverse):
        return inverse_apply(spec.inner, op, epsilon=spec.epsilon).operator
    if isinstance(spec, Compose):
        current = op
        for item in reversed(spec.items):
            keep = trim_dim(current.matrix,
                            trim_tolerance * max(1.0, float(np.max(np.abs(current.matrix)))))
            if keep < current.dim:
                current = TruncatedOperator(current.matrix[:keep, :keep],
                                            label=current.label,
                                            hermitian_hint=current.hermitian_hint)
            current = apply(item, current)
        return current
    raise ValidationError(f"not a channel spec: {spec!r}")


def coherent_projection(x, route: str = "compose",
                        grid: PhaseGrid | None = None) -> TruncatedOperator:
    """Double smoothing of X, which projects onto coherent states.

    Three routes realize the same map and certify each other:
    * "compose": the smoothing channel applied twice;
    * "reversed": attenuate by 1/2 first, then amplify by 2 (the same map
      in the opposite factor order);
    * "projection": the literal quadrature sum of Q_X(alpha) |alpha><alpha|
      over a grid, auto-sized to X's support when none is given.
    """
    op = _as_operator(x)
    if route == "compose":
        c = smoothing_channel()
        return apply(Compose((c, c)), op).relabeled(f"double_smooth[{op.label}]")
    if route == "reversed":
        return apply(Compose((Amplifier(2.0), Attenuator(0.5))), op).relabeled(
            f"double_smooth_reversed[{op.label}]")
    if route == "projection":
        mat = op.matrix
        dim = mat.shape[0]
        if grid is None:
            live = trim_dim(mat, 1e-12 * max(1.0, float(np.max(np.abs(mat)))))
            extent = math.sqrt(live) + 4.5
            grid = PhaseGrid(half_extent=extent, spacing=0.1)
        flat = grid.alphas().ravel()
        block = _coherent_block(flat, dim)
        q = np.einsum("pn,pn->p", block.conj() @ mat, block)
        weights = q * (grid.spacing**2 / math.pi)
        # The image has an amplified tail; reconstruct on the grown dim.
        dim_out = _amplifier_default_dim(2.0, mat)
        block_out = block if dim_out == dim else _coherent_block(flat, dim_out)
        out = (block_out.T * weights) @ block_out.conj()
        return TruncatedOperator(out, label=f"double_smooth_projection[{op.label}]")
    raise ValidationError(
        f"route must be 'compose', 'reversed' or 'projection', got {route!r}")


@dataclass(frozen=True, eq=False)
class Superoperator:
    """Row-major matrix form: vec(out) = matrix @ vec(in)."""

    spec: ChannelSpec
    dim: int
    matrix: np.ndarray

    def apply_matrix(self, mat: np.ndarray) -> np.ndarray:
        return (self.matrix @ np.asarray(mat, dtype=np.complex128).reshape(-1)).reshape(
            self.dim, self.dim)


def _kraus_stack(spec: ChannelSpec, dim: int) -> list[np.ndarray]:
    if isinstance(spec, Amplifier):
        return _amplifier_kraus(spec.kappa, dim, dim)
    if isinstance(spec, Attenuator):
        return list(attenuator_kraus(spec.transmissivity, dim).matrices)
    raise ValidationError(f"no Kraus stack for {spec!r}")


@lru_cache(maxsize=16)
def _superoperator_matrix(spec: ChannelSpec, dim: int) -> np.ndarray:
    if isinstance(spec, AdditiveNoise):
        return _superoperator_matrix(additive_noise_expansion(spec), dim)
    if isinstance(spec, Inverse):
        raise ValidationError(
            "a regularized inverse has no exact superoperator; use inverse_apply")
    if isinstance(spec, Compose):
        return _compose_superoperator(spec, dim)
    mats = _kraus_stack(spec, dim)
    total = np.zeros((dim * dim, dim * dim), dtype=np.complex128)
    for k in mats:
        total += np.kron(k, k.conj())
    return total


def _atoms_in_application_order(spec: ChannelSpec) -> list:
    if isinstance(spec, (Amplifier, Attenuator)):
        return [spec]
    if isinstance(spec, AdditiveNoise):
        return _atoms_in_application_order(additive_noise_expansion(spec))
    if isinstance(spec, Compose):
        atoms = []
        for item in reversed(spec.items):
            atoms.extend(_atoms_in_application_order(item))
        return atoms
    raise ValidationError(
        "a regularized inverse has no exact superoperator; use inverse_apply")


def _diagonal_transfer(atom, offset: int, cur_dim: int) -> tuple[np.ndarray, int]:
    """Transfer matrix of one atom restricted to diagonal offset `offset`.

    Both channel atoms preserve the diagonal offset m - n, so their action
    splits into independent small matrices, one per diagonal.
    """
    if isinstance(atom, Attenuator):
        lam = atom.transmissivity
        width = cur_dim - offset
        if lam == 1.0:
            return np.eye(width), cur_dim
        t = np.zeros((width, width))
        if lam == 0.0:
            if offset == 0:
                t[0, :] = 1.0
            return t, cur_dim
        log_lam, log_rest = math.log(lam), math.log(1.0 - lam)
        for j in range(cur_dim):
            length = width - j
            if length <= 0:
                break
            g_low = _shell_vector(j, length, -log_lam, log_rest)
            g_high = _shell_vector(j, length + offset, -log_lam, log_rest)[offset:]
            t[np.arange(length), np.arange(j, j + length)] = g_low * g_high
        return t, cur_dim
    if isinstance(atom, Amplifier):
        kappa = atom.kappa
        width_in = cur_dim - offset
        if kappa == 1.0:
            return np.eye(width_in), cur_dim
        out_dim = _amplifier_grown_dim(kappa, cur_dim)
        width_out = out_dim - offset
        log_kappa = math.log(kappa)
        log_ratio = math.log((kappa - 1.0) / kappa)
        t = np.zeros((width_out, width_in))
        for j in range(width_out):
            length = min(width_in, width_out - j)
            g_low = _shell_vector(j, length, log_kappa, log_ratio)
            g_high = _shell_vector(j, length + offset, log_kappa, log_ratio)[offset:]
            t[np.arange(j, j + length), np.arange(length)] = g_low * g_high / kappa
        return t, out_dim
    raise ValidationError(f"not a channel atom: {atom!r}")


def _compose_superoperator(spec: Compose, dim: int) -> np.ndarray:
    """Columns are images of matrix units under the grown-then-cropped
    pipeline; a product of square-cropped factor superoperators would crop
    between the stages instead, discarding mass the later stages fold back
    below dim and spoiling the small singular values the inverse needs.
    Offset preservation reduces the build to per-diagonal transfers.
    """
    atoms = _atoms_in_application_order(spec)
    total = np.zeros((dim * dim, dim * dim), dtype=np.complex128)
    for offset in range(dim):
        transfer = np.eye(dim - offset)
        cur_dim = dim
        for atom in atoms:
            step, cur_dim = _diagonal_transfer(atom, offset, cur_dim)
            transfer = step @ transfer
        block = transfer[:dim - offset, :]
        rows = np.arange(dim - offset)
        cols = np.arange(dim - offset)
        upper_rows = rows * dim + rows + offset
        upper_cols = cols * dim + cols + offset
        total[np.ix_(upper_rows, upper_cols)] = block
        if offset:
            lower_rows = (rows + offset) * dim + rows
            lower_cols = (cols + offset) * dim + cols
            total[np.ix_(lower_rows, lower_cols)] = block
    return total


def superoperator_of(spec: ChannelSpec, dim: int) -> Superoperator:
    """Square matrix form at fixed dim (amplifier growth is cropped there)."""
    if dim < 1:
        raise ValidationError(f"dimension must be positive, got {dim}")
    mat = _superoperator_matrix(spec, int(dim))
    return Superoperator(spec=spec, dim=int(dim), matrix=mat)


@dataclass(frozen=True, eq=False)
class InverseResult:
    operator: TruncatedOperator
    residual: float
    epsilon: float


@lru_cache(maxsize=16)
def _tikhonov_solver(spec: ChannelSpec, dim: int, epsilon: float):
    from scipy.linalg import cho_factor

    m = _superoperator_matrix(spec, dim)
    gram = m.conj().T @ m + epsilon * np.eye(dim * dim, dtype=np.complex128)
    return cho_factor(gram), m


def inverse_apply(spec: ChannelSpec, x, epsilon: float = 1e-10,
                  max_residual: float | None = None) -> InverseResult:
    """Tikhonov-regularized preimage: argmin |C(Y) - X|^2 + eps |Y|^2.

    The residual reports the trace distance between C(Y) and X; the forward
    map only, never the regularizer, decides whether the preimage is
    trustworthy.  Hermitian inputs get Hermitian preimages (the exact
    preimage is, and projecting cannot grow the residual of a Hermitian-
    covariant map).
    """
    if not epsilon > 0.0:
        raise ValidationError(f"epsilon must be positive, got {epsilon}")
    op = _as_operator(x)
    mat = op.matrix
    dim = mat.shape[0]
    from scipy.linalg import cho_solve

    factor, m = _tikhonov_solver(spec, dim, float(epsilon))
    rhs = m.conj().T @ mat.reshape(-1)
    y = cho_solve(factor, rhs).reshape(dim, dim)
    scale = max(1.0, float(np.max(np.abs(mat))))
    if hermiticity_defect(mat) <= 1e-10 * scale:
        y = 0.5 * (y + y.conj().T)
    forward = (m @ y.reshape(-1)).reshape(dim, dim)
    residual = trace_distance(forward, mat)
    result = InverseResult(
        operator=TruncatedOperator(y, label=f"inverse[{op.label}]"),
        residual=float(residual), epsilon=float(epsilon))
    if max_residual is not None and residual > max_residual:
        raise IllConditionedInverseError(
            f"inverse residual {residual:.3e} exceeds {max_residual:g}; "
            f"the preimage is not trustworthy at this epsilon",
            residual=float(residual), result=result)
    return result


def channel_diagnostics(x_in, x_out) -> dict:
    """Trace, hermiticity, positivity and photon bookkeeping for a channel hop."""
    a = _as_operator(x_in).matrix
    b = _as_operator(x_out).matrix
    diag = {
        "trace_in": float(np.trace(a).real),
        "trace_out": float(np.trace(b).real),
        "trace_deficit": float(abs(np.trace(a).real - np.trace(b).real)),
        "hermiticity_defect_out": hermiticity_defect(b),
        "psd_floor_out": float(np.min(np.linalg.eigvalsh(0.5 * (b + b.conj().T)))),
    }
    for name, mat in (("mean_photon_in", a), ("mean_photon_out", b)):
        value = np.sum(np.arange(mat.shape[0]) * np.diagonal(mat))
        diag[name] = float(value.real)
    return diag
