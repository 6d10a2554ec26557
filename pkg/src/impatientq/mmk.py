"""Two-class M/M/k+M FCFS queue via the virtual queueing time process.

The state is (W, N1, N2): virtual wait plus the class mix of the busy
servers just before a virtual arrival would enter service.  The atoms
``p_n`` at W = 0 follow from a level-reduction recursion; the transform
vector psi(s) = p_{k-1} C(s) with C(s) a path-sum series over the lattice
of patience-rate shifts s + i*theta1 + j*theta2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import mpmath
import numpy as np

from . import kernels, mg1
from ._mpkernel import matrix_series_mp
from ._pykernels import jump_coefficients
from .model import MmkConfig


class SolverError(RuntimeError):
    """The linear algebra or the series failed to produce a valid solution."""


class NonConvergenceError(SolverError):
    """A series hit max_diagonal before the stopping rule fired."""


# Estimated relative error from rounding that a solution may carry; above it
# the solve moves to double-double series, then to more bits.
ROUNDING_TARGET = 1e-12
# the rounding probe moves series entries by this many units of the precision
PROBE_UNITS = 8
PROBE_TRIALS = 3
PROBE_SEED = 0
DD_BITS = 104
MAX_BITS = 2048
# extra bits for the k x k algebra on top of the series precision
ALGEBRA_GUARD_BITS = 32
# estimated truncation error accepted, as a multiple of the series tolerance;
# beyond it the series is summed deeper, at most MAX_DEEPEN times
TRUNCATION_SLACK = 10
MAX_DEEPEN = 4
# tolerance factor applied when an attempt fails to assemble
FAILED_DEEPEN = 1e-4
# total offered load below which the square of the load underflows
LIGHT_TRAFFIC = 1e-200
# arrival share below which a class is invisible to the other class
NEGLIGIBLE_SHARE = 1e-40


@dataclass(frozen=True)
class BoundaryMatrices:
    k: int
    Lambda: list  # Lambda[n]: (n+1) x (n+2)
    M: list       # M[n]: (n+1) x n  (M[0] is an empty 1 x 0 array)
    Delta: list   # Delta[n]: (n+1) x (n+1)
    R: list       # R[n]: (n+1) x n  (R[0] unused)

    @property
    def Q(self) -> np.ndarray:
        """Delta_{k-1} - R_{k-1} Lambda_{k-2}.

        Its rows sum to zero, so the diagonal is taken as the sum of the
        off-diagonal magnitudes instead of a difference of nearly equal terms.
        """
        k = self.k
        return _zero_row_sum(self.R[k - 1] @ self.Lambda[k - 2])


@dataclass(frozen=True)
class MmkSolution:
    """Boundary atoms and transform values at the patience rates.

    ``p_vectors[n][i]`` is P(W=0, N1=i, N2=n-i).  Solutions from the
    equal-service-rate path are *aggregated*: each level carries a single
    entry P(W=0, N=n) and the psi vectors have length one.
    """
    p_vectors: tuple
    psi_theta: tuple
    dpsi_theta: tuple
    phi0: np.ndarray
    truncation_diagonal_used: int
    tail_bound: float
    aggregated: bool = False
    extended: bool = False   # series summed beyond double precision
    miss_theta: tuple = ()          # P(T < W) per class, computed without cancellation
    served_wait_theta: tuple = ()   # E(W; T > W) per class
    rounding_bound: float = 0.0     # estimated relative error from rounding; 0 if not probed
    precision_bits: int = 53        # significand bits of the series arithmetic

    @property
    def k(self) -> int:
        return len(self.p_vectors)

    def p_serve(self, cls: int) -> float:
        lower = sum(float(p.sum()) for p in self.p_vectors[:-1])
        return lower + float(self.psi_theta[cls].sum())

    def miss(self, cls: int) -> float:
        """Probability that a class ``cls`` arrival abandons."""
        if self.miss_theta:
            return self.miss_theta[cls]
        return 1.0 - self.p_serve(cls)

    def served_wait(self, cls: int) -> float:
        """E(W; T > W) for class ``cls``."""
        if self.served_wait_theta:
            return self.served_wait_theta[cls]
        return -float(self.dpsi_theta[cls].sum())

    def normalization(self) -> float:
        return sum(float(p.sum()) for p in self.p_vectors) + float(self.phi0.sum())


def build_boundary(config: MmkConfig) -> BoundaryMatrices:
    k = config.servers
    lam1, lam2 = config.lam
    mu1, mu2 = config.mu
    lam = lam1 + lam2
    Lambda, M, Delta = [], [], []
    for n in range(k):
        L = np.zeros((n + 1, n + 2))
        Mn = np.zeros((n + 1, n))
        for i in range(n + 1):
            L[i, i + 1] = lam1
            L[i, i] = lam2
            if i >= 1:
                Mn[i, i - 1] = i * mu1
            if i <= n - 1:
                Mn[i, i] = (n - i) * mu2
        Lambda.append(L)
        M.append(Mn)
        Delta.append(np.diag([i * mu1 + (n - i) * mu2 for i in range(n + 1)]))
    R = [np.zeros((1, 0))]
    if k >= 2:
        if lam <= 0:
            raise SolverError("level reduction needs a positive total arrival rate")
        R.append(M[1] / lam)
        for n in range(1, k - 1):
            # G = lam I + Delta_n - R_n Lambda_{n-1} has row sums lam
            R.append(_gth_right_solve(R[n] @ Lambda[n - 1], np.full(n + 1, lam), M[n + 1]))
    return BoundaryMatrices(k, Lambda, M, Delta, R)


def _zero_row_sum(P):
    """-P off the diagonal, with the diagonal making every row sum zero."""
    off = P.copy()
    np.fill_diagonal(off, 0)
    out = -off
    np.fill_diagonal(out, off.sum(axis=1))
    return out


def _gth_right_solve(P, rowsum, B):
    """X with X G = B, where G has off-diagonal part -P (P >= 0) and row sums ``rowsum`` > 0.

    Gaussian elimination in the Grassmann-Taksar-Heyman form: pivots are
    rebuilt from the tracked row sums, so every intermediate is a sum of
    terms of one sign and no accuracy is lost when G is close to singular.
    Works on float or mpmath object arrays.
    """
    m = len(rowsum)
    dtype = object if P.dtype == object else float
    A = -np.array(P, dtype=dtype)
    for i in range(m):
        A[i, i] = 0 * A[i, i]
    r = np.array(rowsum, dtype=dtype)
    piv = np.empty(m, dtype=A.dtype)
    for p in range(m):
        piv[p] = r[p] - A[p, p + 1:].sum()
        l = A[p + 1:, p] / piv[p]
        A[p + 1:, p + 1:] -= np.outer(l, A[p, p + 1:])
        r[p + 1:] = r[p + 1:] - l * r[p]
        A[p + 1:, p] = l
    Z = np.empty(B.shape, dtype=A.dtype)
    for j in range(m):
        Z[:, j] = (B[:, j] - Z[:, :j] @ A[:j, j]) / piv[j]
    X = np.empty(B.shape, dtype=A.dtype)
    for j in range(m - 1, -1, -1):
        X[:, j] = Z[:, j] - X[:, j + 1:] @ A[j + 1:, j]
    return X


def _dense_jump(k, lam1, lam2, mu1, mu2, s):
    d1, u1, d2, l2, dd1, du1, dd2, dl2 = jump_coefficients(k, lam1, lam2, mu1, mu2, np.array([s]))
    A1 = np.diag(d1[0]) + np.diag(u1[0], 1)
    A2 = np.diag(d2[0]) + np.diag(l2[0], -1)
    A1p = np.diag(dd1[0]) + np.diag(du1[0], 1)
    A2p = np.diag(dd2[0]) + np.diag(dl2[0], -1)
    return A1, A2, A1p, A2p


def jump_matrices(config: MmkConfig, s: float, boundary: BoundaryMatrices | None = None):
    """A1(s), A2(s), D(s), H1(s), H2(s) for s > 0."""
    if not s > 0:
        raise ValueError(f"s must be positive, got {s}")
    if boundary is None:
        boundary = build_boundary(config)
    k = config.servers
    A1, A2, _, _ = _dense_jump(k, *config.lam, *config.mu, s)
    D = np.eye(k) + boundary.Q / s
    return A1, A2, D, A1 / s, A2 / s


def jump_derivatives_at_zero(config: MmkConfig):
    """A1'(0), A2'(0) in closed form."""
    _, _, A1p, A2p = _dense_jump(config.servers, *config.lam, *config.mu, 0.0)
    return A1p, A2p


@dataclass(frozen=True)
class SeriesResult:
    C: np.ndarray
    Cp: np.ndarray
    log_scale: float
    diagonals: int
    tail_bound: float
    converged: bool
    path: np.ndarray = None    # C - D(s): the lattice terms off the origin
    dpath: np.ndarray = None   # C' - D'(s)
    sums: np.ndarray = None    # raw kernel sums the path parts are formed from
    spread: np.ndarray = None  # rounding scale of each entry of ``sums``
    Q: np.ndarray = None


def _path_parts(Q, sums):
    """C - D(s) and C' - D'(s) from the five kernel sums."""
    S0, S1, S2, T0, T1 = sums
    return S0 + Q @ S1, T0 + Q @ T1 - Q @ S2


def _spread(mags, s):
    """Entrywise magnitude of the terms behind each kernel sum; 1/x <= 1/s."""
    a, b = mags
    return (a, a / s, a / s ** 2, b, b / s)


def c_matrix_series(config: MmkConfig, s: float, boundary: BoundaryMatrices | None = None,
                    min_diagonal: int = 0) -> SeriesResult:
    """C(s) and C'(s); true values are ``exp(log_scale)`` times the stored ones."""
    if not s > 0:
        raise ValueError(f"s must be positive, got {s}")
    if boundary is None:
        boundary = build_boundary(config)
    k = config.servers
    Q = boundary.Q
    sums, mags, n, tail, log_scale, ok = kernels.matrix_series(
        k, *config.lam, *config.mu, *config.theta, float(s),
        config.tolerance, config.max_diagonal, min_diagonal)
    E, Ep = _path_parts(Q, sums)
    origin = math.exp(-log_scale)
    C = origin * (np.eye(k) + Q / s) + E
    Cp = -origin * Q / s ** 2 + Ep
    return SeriesResult(C, Cp, log_scale, n, tail, ok, E, Ep, sums,
                        np.stack(_spread(mags, s)), Q)


def _empty_solution(k: int, aggregated=False) -> MmkSolution:
    if aggregated:
        ps = tuple(np.array([1.0 if n == 0 else 0.0]) for n in range(k))
        zero = np.zeros(1)
    else:
        ps = tuple(np.eye(1)[0] if n == 0 else np.zeros(n + 1) for n in range(k))
        zero = np.zeros(k)
    return MmkSolution(ps, (zero.copy(), zero.copy()), (zero.copy(), zero.copy()),
                       zero.copy(), 0, 0.0, aggregated,
                       miss_theta=(0.0, 0.0), served_wait_theta=(0.0, 0.0))


def _solve_single_server(config: MmkConfig) -> MmkSolution:
    sol = mg1.solve_mg1(config.as_mg1())
    th = config.theta
    psi = tuple(np.array([sol.psi_at[t]]) for t in th)
    dpsi = tuple(np.array([sol.dpsi_at[t]]) for t in th)
    return MmkSolution((np.array([sol.p0]),), psi, dpsi, np.array([1.0 - sol.p0]),
                       sol.truncation_diagonal_used, sol.tail_bound,
                       miss_theta=tuple(sol.miss(t) for t in th),
                       served_wait_theta=tuple(-sol.dpsi_at[t] for t in th))


def _drop_negligible_class(config: MmkConfig) -> MmkConfig:
    """Zero an arrival rate too small to move the state distribution.

    Such a class changes every probability by a relative amount below
    NEGLIGIBLE_SHARE, while its reciprocal would overflow the level reduction.
    """
    total = sum(config.lam)
    c1, c2 = config.classes
    if 0 < c1.arrival_rate < NEGLIGIBLE_SHARE * total:
        c1 = c1.with_arrival_rate(0.0)
    if 0 < c2.arrival_rate < NEGLIGIBLE_SHARE * total:
        c2 = c2.with_arrival_rate(0.0)
    return replace(config, class1=c1, class2=c2)


def _light_traffic_solution(config: MmkConfig) -> MmkSolution:
    """Offered load below LIGHT_TRAFFIC: nobody waits to double precision.

    Busy servers follow the independent Poisson occupancy of each class; any
    term of order load**2 relative to the leading one underflows.
    """
    k = config.servers
    rho1, rho2 = (l / m for l, m in zip(config.lam, config.mu))
    weights = [np.array([rho1 ** i / math.factorial(i) * rho2 ** (n - i) / math.factorial(n - i)
                         for i in range(n + 1)]) for n in range(k)]
    p0 = 1.0 / sum(float(w.sum()) for w in weights)
    p_vectors = tuple(p0 * w for w in weights)
    zero = np.zeros(k)
    return MmkSolution(p_vectors, (p_vectors[-1].copy(), p_vectors[-1].copy()),
                       (zero.copy(), zero.copy()), zero.copy(), 0, 0.0,
                       miss_theta=(0.0, 0.0), served_wait_theta=(0.0, 0.0))


def _clean_probabilities(p: np.ndarray, what: str) -> np.ndarray:
    if np.any(p < -1e-12):
        raise SolverError(f"negative {what} {p.min():.3g}; truncation too coarse")
    return np.clip(p, 0.0, None)


def _equilibrate(B, sweeps=50):
    """Row/column scalings r, c with diag(r) B diag(c) having unit max-norms."""
    r = np.ones(B.shape[0])
    c = np.ones(B.shape[1])
    for _ in range(sweeps):
        S = np.abs(r[:, None] * B * c[None, :])
        rmax = S.max(axis=1)
        r /= np.sqrt(np.where(rmax > 0, rmax, 1.0))
        S = np.abs(r[:, None] * B * c[None, :])
        cmax = S.max(axis=0)
        c /= np.sqrt(np.where(cmax > 0, cmax, 1.0))
        if np.all(np.abs(np.log(rmax[rmax > 0])) < 1e-3) and np.all(np.abs(np.log(cmax[cmax > 0])) < 1e-3):
            break
    return r, c


def _left_null_vector(B):
    """q with q B = 0 via SVD of the equilibrated matrix; q >= 0 up to sign.

    Also returns ``sv[-2] / sv[0]``, the relative gap separating the null
    direction from the rest of the spectrum.
    """
    r, c = _equilibrate(B)
    Bs = r[:, None] * B * c[None, :]
    _, sv, Vt = np.linalg.svd(Bs.T)
    if sv[0] == 0:
        raise SolverError("boundary system is identically zero")
    if len(sv) >= 2 and sv[-2] <= len(sv) * np.finfo(float).eps * sv[0]:
        raise SolverError(
            f"boundary null space has dimension > 1 (singular values {sv}, "
            f"condition {sv[0] / sv[-2] if sv[-2] > 0 else math.inf:.3g})")
    # y Bs = 0 with y = q / r
    q = Vt[-1] * r
    if q.sum() < 0:
        q = -q
    gap = sv[-2] / sv[0] if len(sv) >= 2 else 1.0
    return q, gap


def _needs_swap(config: MmkConfig) -> bool:
    (l1, l2), (m1, m2), (t1, t2) = config.lam, config.mu, config.theta
    return (l2, m2, t2) < (l1, m1, t1)


def swap_solution(sol: MmkSolution) -> MmkSolution:
    """The same solution with the class labels exchanged."""
    flip = lambda v: np.ascontiguousarray(v[::-1])
    return replace(sol, p_vectors=tuple(flip(p) for p in sol.p_vectors),
                   psi_theta=tuple(flip(v) for v in sol.psi_theta[::-1]),
                   dpsi_theta=tuple(flip(v) for v in sol.dpsi_theta[::-1]),
                   phi0=flip(sol.phi0),
                   miss_theta=sol.miss_theta[::-1],
                   served_wait_theta=sol.served_wait_theta[::-1])


def solve_mmk(config: MmkConfig, min_diagonal: int = 0, extended: bool | None = None) -> MmkSolution:
    """Solve the boundary system and evaluate psi at the patience rates.

    ``extended=None`` moves beyond double precision when the estimated
    rounding error calls for it; False stays in double, True skips double.
    Classes are solved in a canonical order so that relabelling them gives
    bit-identical measures.
    """
    if _needs_swap(config):
        return swap_solution(_solve_mmk(config.swapped(), min_diagonal, extended))
    return _solve_mmk(config, min_diagonal, extended)


def _solve_mmk(config: MmkConfig, min_diagonal: int, extended: bool | None) -> MmkSolution:
    k = config.servers
    if k == 1:
        return _solve_single_server(config)
    if sum(config.lam) == 0:
        return _empty_solution(k)
    if sum(l / m for l, m in zip(config.lam, config.mu)) < LIGHT_TRAFFIC:
        return _light_traffic_solution(config)
    config = _drop_negligible_class(config)
    return _solve_refined(config, min_diagonal, extended)


@dataclass(frozen=True)
class _Attempt:
    raw: object          # _Raw, or None when the boundary system could not be resolved
    sensitivity: float   # relative change of the results per unit series perturbation
    tail: float          # relative truncation tail of the series
    diagonals: int


def _solve_refined(config: MmkConfig, min_diagonal: int, extended: bool | None) -> MmkSolution:
    """Repeat the solve with more bits or a deeper series until the estimated
    rounding error is below ROUNDING_TARGET and the estimated truncation error
    below TRUNCATION_SLACK times the requested tolerance.

    ``extended=False`` stays in double precision and ``True`` starts above it.
    """
    bits = DD_BITS if extended else 53
    tol = config.tolerance
    deepened = 0
    while True:
        trial = replace(config, tolerance=tol)
        at = _attempt_double(trial, min_diagonal) if bits == 53 else \
            _attempt_precise(trial, min_diagonal, bits)
        # ldexp: 2**-bits underflows a double beyond ~1070 bits
        rounding = math.ldexp(at.sensitivity * PROBE_UNITS, -bits)
        truncation = at.sensitivity * at.tail
        retry = False
        if at.raw is None and extended is not False and deepened < MAX_DEEPEN:
            # a failed assembly gives no estimate; the cause can be truncation
            # as well as rounding, so deepen along with the precision increase
            tol *= FAILED_DEEPEN
            deepened += 1
            retry = True
        elif truncation > TRUNCATION_SLACK * config.tolerance and deepened < MAX_DEEPEN \
                and math.isfinite(truncation):
            # the tail shrinks in proportion to the stopping tolerance
            tol *= TRUNCATION_SLACK * config.tolerance / truncation / 16
            deepened += 1
            retry = True
        if rounding > ROUNDING_TARGET:
            if extended is False:
                if at.raw is None:
                    raise SolverError("boundary system unresolved in double precision")
            elif bits >= MAX_BITS:
                raise NonConvergenceError(
                    f"boundary system unresolved at {bits} bits "
                    f"(estimated rounding error {rounding:.3g})")
            else:
                bits = _more_bits(bits, rounding)
                retry = True
        if not retry:
            break
    if at.raw is None:
        raise NonConvergenceError(f"boundary system unresolved at {bits} bits")
    return _finish(at.raw, at.diagonals, at.tail * max(at.sensitivity, 1.0), rounding, bits,
                   extended=bits > 53)


def _more_bits(bits: int, rounding: float) -> int:
    if bits == 53:
        return DD_BITS
    if not math.isfinite(rounding):
        return min(MAX_BITS, 2 * bits)
    extra = math.ceil(math.log2(rounding / ROUNDING_TARGET)) + 16
    return min(MAX_BITS, bits + max(extra, 32))


def _attempt_double(config: MmkConfig, min_diagonal: int) -> _Attempt:
    k = config.servers
    boundary = build_boundary(config)
    series = [c_matrix_series(config, th, boundary, min_diagonal) for th in config.theta]
    for sr in series:
        if not sr.converged:
            raise NonConvergenceError(
                f"C(s) series not converged after {sr.diagonals} diagonals")
    tail = max(sr.tail_bound for sr in series)
    diagonals = max(sr.diagonals for sr in series)
    A0 = _dense_jump(k, *config.lam, *config.mu, 0.0)
    jumps = ((A0[0], A0[1]), (A0[2], A0[3]))
    try:
        raw = _assemble(config, boundary, series, jumps)
    except SolverError:
        return _Attempt(None, math.inf, tail, diagonals)
    sens = _sensitivity(
        lambda d, rng: _assemble(config, boundary, _perturbed(series, d, rng), jumps),
        raw, PROBE_UNITS * 2.0 ** -53)
    return _Attempt(raw, sens, tail, diagonals)


@dataclass(frozen=True)
class _Raw:
    """Unnormalized-free pieces of a solution, before packing."""
    p_vectors: tuple
    psi: tuple
    dpsi: tuple
    phi0: np.ndarray
    miss: tuple
    served: tuple

    exact: tuple = ()   # key quantities at working precision, when above double

    def key(self) -> list:
        """The quantities whose sensitivity decides precision and depth."""
        if self.exact:
            return list(self.exact)
        return [*(float(p.sum()) for p in self.p_vectors),
                *(float(v.sum()) for v in self.psi), *self.miss, *self.served]


def _assemble(config, boundary, series, jumps) -> _Raw:
    """Boundary null vector, level recursion and normalization in double."""
    k = config.servers
    A_at0, Ap_at0 = jumps
    L = max(sr.log_scale for sr in series)
    w = [math.exp(sr.log_scale - L) for sr in series]
    # homogeneous boundary system, divided through by exp(L)
    B = math.exp(-L) * boundary.Q + sum(wi * sr.C @ A for wi, sr, A in zip(w, series, A_at0))
    q, _ = _left_null_vector(B)
    # lower levels via p_n = p_{n+1} R_{n+1}, rescaled per level since R ~ mu/lam
    levels, logs = [None] * k, [0.0] * k
    levels[k - 1] = q
    for n in range(k - 2, -1, -1):
        v = levels[n + 1] @ boundary.R[n + 1]
        size = float(v.sum())
        if not size > 0:
            raise SolverError("level recursion lost positivity")
        levels[n], logs[n] = v / size, logs[n + 1] + math.log(size)
    top = max(logs)
    lower_mass = sum(math.exp(g - top) * float(v.sum()) for g, v in zip(logs, levels))
    Phi = sum(wi * (sr.C @ Ap + sr.Cp @ A) for wi, sr, A, Ap in zip(w, series, A_at0, Ap_at0))
    phi_mass = float(q @ Phi @ np.ones(k))
    # log of exp(top - L) * lower_mass + phi_mass
    shift = top - L
    total = (lower_mass + math.exp(-shift) * phi_mass if shift >= 0
             else math.exp(shift) * lower_mass + phi_mass)
    if not total > 0:
        raise SolverError(f"normalization constant is not positive ({total:.3g})")
    log_denom = max(shift, 0.0) + math.log(total)
    p_vectors = tuple(_clean_probabilities(math.exp(g - L - log_denom) * v, "boundary probability")
                      for g, v in zip(logs, levels))
    scale = math.exp(-log_denom)
    psi = tuple(scale * wi * (q @ sr.C) for wi, sr in zip(w, series))
    dpsi = tuple(scale * wi * (q @ sr.Cp) for wi, sr in zip(w, series))
    phi0 = scale * (q @ Phi)
    # 1 - p_serve = phi0 e + p_{k-1} e - psi e, and psi e - p_{k-1} e is the path part of C
    miss = tuple(max(float(phi0.sum()) - scale * wi * float(q @ sr.path.sum(axis=1)), 0.0)
                 for wi, sr in zip(w, series))
    served = tuple(-scale * wi * float(q @ sr.dpath.sum(axis=1)) for wi, sr in zip(w, series))
    return _Raw(p_vectors, psi, dpsi, phi0, miss, served)


def _signs(rng, shape):
    return rng.choice((-1.0, 1.0), size=shape)


def _perturbed(series, delta, rng):
    """Series results with every kernel sum moved by +-delta times the
    magnitude of the terms it accumulated."""
    out = []
    for sr in series:
        sums = sr.sums + delta * sr.spread * _signs(rng, sr.sums.shape)
        E, Ep = _path_parts(sr.Q, sums)
        out.append(replace(sr, path=E, dpath=Ep, C=sr.C + (E - sr.path), Cp=sr.Cp + (Ep - sr.dpath)))
    return out


def _sensitivity(assemble, base: _Raw, delta: float) -> float:
    """Largest relative change of ``base.key()`` per unit of relative
    perturbation of the series entries, over a few random sign patterns.

    Perturbations of the size of the working precision's rounding error
    stand in for the rounding actually committed while summing the series.
    """
    rng = np.random.default_rng(PROBE_SEED)
    ref = base.key()
    worst = 0.0
    for _ in range(PROBE_TRIALS):
        try:
            moved = assemble(delta, rng).key()
        except SolverError:
            return math.inf
        for a, b in zip(moved, ref):
            if b != 0:
                worst = max(worst, float(abs(a - b) / abs(b) / delta))
    return worst


def _finish(raw: _Raw, diagonals, tail, rounding, bits, **kw) -> MmkSolution:
    """Renormalize after clamping and pack the solution."""
    p_vectors, psi, dpsi, phi0 = raw.p_vectors, raw.psi, raw.dpsi, raw.phi0
    miss, served = raw.miss, raw.served
    total = sum(float(p.sum()) for p in p_vectors) + float(phi0.sum())
    if abs(total - 1.0) > 1e-9:
        p_vectors = tuple(p / total for p in p_vectors)
        psi = tuple(v / total for v in psi)
        dpsi = tuple(v / total for v in dpsi)
        phi0 = phi0 / total
        miss = tuple(v / total for v in miss)
        served = tuple(v / total for v in served)
    return MmkSolution(p_vectors, psi, dpsi, phi0, diagonals, tail,
                       miss_theta=miss, served_wait_theta=served,
                       rounding_bound=rounding, precision_bits=bits, **kw)


# --- extended precision -----------------------------------------------------

def _mp_boundary(config: MmkConfig):
    """R_n and Q computed in mpmath from the exact (double) model rates."""
    k = config.servers
    lam1, lam2 = (mpmath.mpf(v) for v in config.lam)
    mu1, mu2 = (mpmath.mpf(v) for v in config.mu)
    lam = lam1 + lam2
    Lambda, M = [], []
    for n in range(k):
        L = mpmath.zeros(n + 1, n + 2)
        Mn = mpmath.zeros(n + 1, max(n, 1))
        for i in range(n + 1):
            L[i, i + 1] = lam1
            L[i, i] = lam2
            if i >= 1:
                Mn[i, i - 1] = i * mu1
            if i <= n - 1:
                Mn[i, i] = (n - i) * mu2
        Lambda.append(L)
        M.append(Mn)
    R = [None, M[1] / lam]
    for n in range(1, k - 1):
        P = _as_objects(R[n] * Lambda[n - 1])
        X = _gth_right_solve(P, np.array([lam] * (n + 1), dtype=object), _as_objects(M[n + 1]))
        R.append(mpmath.matrix(X.tolist()))
    Q = mpmath.matrix(_zero_row_sum(_as_objects(R[k - 1] * Lambda[k - 2])).tolist())
    return R, Q


def _as_objects(a):
    return np.array(a.tolist(), dtype=object)


def _mp_jump_at_zero(config: MmkConfig):
    """A_i(0) and A_i'(0) in mpmath."""
    k = config.servers
    lam1, lam2 = (mpmath.mpf(v) for v in config.lam)
    mu1, mu2 = (mpmath.mpf(v) for v in config.mu)
    A1, A2, A1p, A2p = (mpmath.zeros(k, k) for _ in range(4))
    for i in range(k):
        a, b = (i + 1) * mu1, (k - 1 - i) * mu2
        A1[i, i] = lam1 * b / (a + b)
        A1p[i, i] = lam1 * a / (a + b) ** 2
        if i < k - 1:
            A1[i, i + 1] = -lam1 * b / (a + b)
            A1p[i, i + 1] = lam1 * b / (a + b) ** 2
        c, e = i * mu1, (k - i) * mu2
        A2[i, i] = lam2 * c / (c + e)
        A2p[i, i] = lam2 * e / (c + e) ** 2
        if i > 0:
            A2[i, i - 1] = -lam2 * c / (c + e)
            A2p[i, i - 1] = lam2 * c / (c + e) ** 2
    return (A1, A2), (A1p, A2p)


def _to_float(v):
    return np.array([float(x) for x in v], dtype=float)


@dataclass(frozen=True)
class _PreciseSeries:
    """Kernel sums and path parts of C and C' in mpmath, scaled by 2**-exp2."""
    theta: float
    sums: list
    spread: list
    path: object
    dpath: object
    exp2: int
    diagonals: int
    tail_bound: float


def _mp_path_parts(Q, sums):
    S0, S1, S2, T0, T1 = sums
    return S0 + Q * S1, T0 + Q * T1 - Q * S2


def _precise_series(config: MmkConfig, Q, min_diagonal: int, bits: int):
    """Series at both patience rates: double-double up to DD_BITS, gmpy2 beyond."""
    k = config.servers
    out = []
    for th in config.theta:
        if bits <= DD_BITS:
            sums, mags, n, tail, exp2, ok = kernels.matrix_series_dd(
                k, *config.lam, *config.mu, *config.theta, float(th),
                config.tolerance, config.max_diagonal, min_diagonal)
            S = [mpmath.matrix([[mpmath.mpf(float(sums[j, r, c, 0])) + mpmath.mpf(float(sums[j, r, c, 1]))
                                 for c in range(k)] for r in range(k)]) for j in range(5)]
            spread = [mpmath.matrix(m.tolist()) for m in _spread(mags, th)]
        else:
            sums, mags, n, tail, ok = matrix_series_mp(
                k, *config.lam, *config.mu, *config.theta, float(th),
                config.tolerance, config.max_diagonal, min_diagonal, bits)
            S = [mpmath.matrix([[mpmath.mpf(v) for v in row] for row in m.tolist()]) for m in sums]
            spread = [mpmath.matrix([[mpmath.mpf(v) for v in row] for row in m.tolist()])
                      for m in _spread(mags, th)]
            exp2 = 0
        if not ok:
            raise NonConvergenceError(f"C(s) series not converged after {n} diagonals")
        path, dpath = _mp_path_parts(Q, S)
        out.append(_PreciseSeries(th, S, spread, path, dpath, exp2, n, tail))
    return out


def _assemble_precise(config, R, Q, jumps, series) -> _Raw:
    k = config.servers
    A_at0, Ap_at0 = jumps
    Cs, Cps = [], []
    for sr in series:
        origin = mpmath.ldexp(1, -sr.exp2)
        Cs.append(origin * (mpmath.eye(k) + Q / sr.theta) + sr.path)
        Cps.append(-origin * Q / mpmath.mpf(sr.theta) ** 2 + sr.dpath)
    E = max(sr.exp2 for sr in series)
    w = [mpmath.ldexp(1, sr.exp2 - E) for sr in series]
    small = mpmath.ldexp(1, -E)
    B = small * Q + sum((wi * C * A for wi, C, A in zip(w, Cs, A_at0)), mpmath.zeros(k, k))
    q = _mp_left_null_vector(B)
    levels = [None] * k
    levels[k - 1] = q
    for n in range(k - 2, -1, -1):
        levels[n] = levels[n + 1] * R[n + 1]
    ones = mpmath.matrix([1] * k)
    lower_mass = sum((sum(v) for v in levels), mpmath.mpf(0))
    Phi = sum((wi * (C * Ap + Cp * A) for wi, C, Cp, A, Ap in zip(w, Cs, Cps, A_at0, Ap_at0)),
              mpmath.zeros(k, k))
    phi = q * Phi
    denom = small * lower_mass + (phi * ones)[0]
    if not denom > 0:
        raise SolverError(f"normalization constant is not positive ({float(denom):.3g})")
    p_vectors = tuple(_clean_probabilities(_to_float(small * v / denom), "boundary probability")
                      for v in levels)
    psi = tuple(_to_float(wi * (q * C) / denom) for wi, C in zip(w, Cs))
    dpsi = tuple(_to_float(wi * (q * Cp) / denom) for wi, Cp in zip(w, Cps))
    phi_total = (phi * ones)[0] / denom
    miss = [phi_total - wi * (q * sr.path * ones)[0] / denom for wi, sr in zip(w, series)]
    served = [-wi * (q * sr.dpath * ones)[0] / denom for wi, sr in zip(w, series)]
    exact = (*(small * sum(v) / denom for v in levels),
             *(wi * (q * C * ones)[0] / denom for wi, C in zip(w, Cs)), *miss, *served)
    return _Raw(p_vectors, psi, dpsi, _to_float(phi / denom),
                tuple(max(float(m), 0.0) for m in miss), tuple(float(v) for v in served), exact)


def _perturbed_precise(series, Q, delta, rng):
    out = []
    for sr in series:
        k = sr.path.rows
        d = mpmath.mpf(delta)
        sums = []
        for m, sp in zip(sr.sums, sr.spread):
            sg = _signs(rng, (k, k))
            sums.append(mpmath.matrix([[m[i, j] + d * sg[i, j] * sp[i, j] for j in range(k)]
                                       for i in range(k)]))
        path, dpath = _mp_path_parts(Q, sums)
        out.append(replace(sr, path=path, dpath=dpath))
    return out


def _attempt_precise(config: MmkConfig, min_diagonal: int, bits: int) -> _Attempt:
    """Series at ``bits`` bits, algebra with ALGEBRA_GUARD_BITS more."""
    with mpmath.workprec(bits + ALGEBRA_GUARD_BITS):
        R, Q = _mp_boundary(config)
        jumps = _mp_jump_at_zero(config)
        series = _precise_series(config, Q, min_diagonal, bits)
        tail = max(sr.tail_bound for sr in series)
        diagonals = max(sr.diagonals for sr in series)
        try:
            raw = _assemble_precise(config, R, Q, jumps, series)
        except SolverError:
            return _Attempt(None, math.inf, tail, diagonals)
        sens = _sensitivity(
            lambda d, rng: _assemble_precise(config, R, Q, jumps,
                                             _perturbed_precise(series, Q, d, rng)),
            raw, mpmath.ldexp(PROBE_UNITS, -bits))
    return _Attempt(raw, sens, tail, diagonals)


def _mp_left_null_vector(B):
    """Row vector q with q B = 0, computed at the working mpmath precision."""
    k = B.rows
    Bf = np.array([[float(B[i, j]) for j in range(k)] for i in range(k)])
    r, c = _equilibrate(Bf)
    Bs = mpmath.matrix(k, k)
    for i in range(k):
        for j in range(k):
            Bs[i, j] = B[i, j] * r[i] * c[j]
    U, S, V = mpmath.svd_r(Bs.T)
    sv = [S[i] for i in range(k)]
    if k >= 2 and sv[-2] <= mpmath.eps * k * sv[0]:
        raise SolverError(
            f"boundary null space has dimension > 1 even in extended precision "
            f"(relative gap {float(sv[-2] / sv[0]):.3g})")
    q = mpmath.matrix(1, k)
    for i in range(k):
        q[0, i] = V[k - 1, i] * r[i]
    if sum(q) < 0:
        q = -q
    return q


def solve_mmk_equal_mu(config: MmkConfig, min_diagonal: int = 0) -> MmkSolution:
    """Scalar solution when both classes share one service rate."""
    mu1, mu2 = config.mu
    if mu1 != mu2:
        raise ValueError(f"equal service rates required, got {mu1} and {mu2}")
    mu = mu1
    k = config.servers
    lam1, lam2 = config.lam
    if lam1 + lam2 == 0:
        return _empty_solution(k, aggregated=True)
    th = config.theta
    lams = (lam1, lam2)
    factors = [lambda x, l=l: l / (x + k * mu) for l in lams]
    dfactors = [lambda x, l=l: -l / (x + k * mu) ** 2 for l in lams]
    results = [mg1.scalar_series(th, factors, dfactors, t, config.tolerance,
                                 config.max_diagonal, min_diagonal) for t in th]
    for r in results:
        if not r.converged:
            raise NonConvergenceError(f"c(s) series not converged after {r.diagonals} diagonals")
    rho = (lam1 + lam2) / mu
    # rho^n/n! normalized over n < k, in log space
    logw = np.array([n * math.log(rho) - math.lgamma(n + 1) for n in range(k)])
    b = np.exp(logw - logw.max())
    b /= b.sum()
    L = max(r.log_scale for r in results)
    # K = 1 / (1 + b_{k-1} sum_i c(theta_i) lam_i / (k mu)); scaled by exp(-L)
    acc = sum(math.exp(r.log_scale - L) * r.c * l for r, l in zip(results, lams)) / (k * mu)
    denom = math.exp(-L) + b[-1] * acc
    K = math.exp(-L) / denom
    p = K * b
    p_last_scaled = b[-1] / denom   # p_{k-1} * exp(L)
    psi = tuple(np.array([p_last_scaled * math.exp(r.log_scale - L) * r.c]) for r in results)
    dpsi = tuple(np.array([p_last_scaled * math.exp(r.log_scale - L) * r.dc]) for r in results)
    phi0 = np.array([sum(float(v[0]) * l for v, l in zip(psi, lams)) / (k * mu)])
    # 1 - p_serve = phi0 - p_{k-1} (c - 1)
    miss = tuple(max(float(phi0[0]) - p_last_scaled * math.exp(r.log_scale - L) * r.path, 0.0)
                 for r in results)
    served = tuple(-float(v[0]) for v in dpsi)
    return MmkSolution(tuple(np.array([v]) for v in p), psi, dpsi, phi0,
                       max(r.diagonals for r in results), max(r.tail_bound for r in results),
                       aggregated=True, miss_theta=miss, served_wait_theta=served)
