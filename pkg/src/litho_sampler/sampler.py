"""Batch active sampling.

Each round keeps the clips the current model finds most likely to be
hotspots, then picks the k of them whose features overlap least (minimum
m'Dm over the capped simplex, rounded to the k largest entries). Only the
picked clips are sent to lithography; the rest are discarded and judged by
the final model.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .config import SamplerConfig, TrainConfig, logger
from .errors import ConsistencyError, DomainError
from .features import FeatureVector
from .learner import MlpModel, embed, incremental_update, init_model, predict_proba, train
from .models import Label
from .schemas import SelectionRecord

PSD_TOL = 1e-7
RANK_DECIMALS = 9
DENSE_EIG_LIMIT = 2048
CHECK_EVERY = 10
POLISH_LIMIT = 512  # largest free set solved directly inside the loop


@dataclass
class DiversityMatrix:
    entries: np.ndarray
    factor: Optional[np.ndarray] = None  # F with entries = F F', when built from vectors

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def low_rank(self) -> bool:
        return self.factor is not None and self.factor.shape[1] < self.n

    def matvec(self, m: np.ndarray) -> np.ndarray:
        if self.low_rank:
            return self.factor @ (self.factor.T @ m)
        return self.entries @ m


@dataclass
class SelectionProblem:
    D: DiversityMatrix
    k: int
    ids: np.ndarray = None  # clip id of every row, defaults to 0..n-1

    def __post_init__(self):
        n = self.D.n
        if not 1 <= self.k <= n:
            raise DomainError(f"budget k={self.k} outside [1, {n}]", "sampler", "SelectionProblem")
        self.ids = np.arange(n) if self.ids is None else np.asarray(self.ids)
        if len(self.ids) != n:
            raise DomainError(f"{len(self.ids)} ids for a {n}x{n} matrix", "sampler", "SelectionProblem")

    @property
    def n(self) -> int:
        return self.D.n

    def objective(self, m: np.ndarray) -> float:
        return float(m @ self.D.matvec(m))


@dataclass
class RelaxedSolution:
    m: np.ndarray
    objective: float
    iterations: int
    converged: bool
    lambda_max: float


@dataclass
class BatchSelection:
    positions: List[int]  # rows of the problem, ascending
    ids: List[int]
    objective_int: float
    objective_topk: float
    relaxed_objective: float
    gap_bound: float
    lambda_max: float
    swaps: int = 0
    converged: bool = True


@dataclass
class ClipBank:
    """Per-clip arrays the sampler reads, rows in ascending clip-id order"""
    ids: np.ndarray
    inputs: np.ndarray  # flattened feature tensors fed to the classifier
    init_vectors: np.ndarray  # normalized channel vectors for the first selection
    _rows: Dict[int, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if np.any(np.diff(self.ids) <= 0):
            raise DomainError("clip ids must be unique and ascending", "sampler", "ClipBank")
        if len(self.inputs) != len(self.ids) or len(self.init_vectors) != len(self.ids):
            raise DomainError("inputs and vectors must have one row per clip", "sampler", "ClipBank")
        self._rows = {int(i): r for r, i in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def rows(self, ids: Iterable[int]) -> np.ndarray:
        return np.fromiter((self._rows[int(i)] for i in ids), dtype=np.intp)


@dataclass
class SamplingResult:
    model: MlpModel
    labeled: Dict[int, Label]
    initial_ids: List[int]
    discarded: Set[int]
    records: List[SelectionRecord]
    litho_total: int


# --- Diversity and spectrum ---

def build_diversity(vectors: Sequence) -> DiversityMatrix:
    """Gram matrix D[i, j] = x_i . x_j of the (normalized) feature vectors."""
    rows = [v.values if isinstance(v, FeatureVector) else np.asarray(v, dtype=np.float64) for v in vectors]
    if not rows:
        return DiversityMatrix(np.zeros((0, 0)))
    if len({r.shape for r in rows}) != 1:
        raise DomainError("feature vectors differ in length", "sampler", "build_diversity")
    F = np.vstack(rows)
    D = F @ F.T
    return DiversityMatrix(0.5 * (D + D.T), F)


def largest_eigenvalue(D: np.ndarray, seed: int = 0, max_iters: int = 200, rtol: float = 1e-9) -> float:
    """Power iteration with a Rayleigh-quotient estimate; D symmetric PSD."""
    n = D.shape[0]
    if n == 0:
        return 0.0
    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iters):
        w = D @ v
        new_lam = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        if abs(new_lam - lam) <= rtol * abs(new_lam):
            lam = new_lam
            break
        lam = new_lam
    return max(lam, 0.0)


def smallest_eigenvalue(D: np.ndarray, seed: int = 0) -> float:
    """Dense solve for small matrices, shifted power iteration otherwise."""
    n = D.shape[0]
    if n == 0:
        return 0.0
    if n <= DENSE_EIG_LIMIT:
        return float(np.linalg.eigvalsh(D)[0])
    top = largest_eigenvalue(D, seed)
    shifted = top * np.eye(n) - D
    return top - largest_eigenvalue(shifted, seed + 1)


def spectrum_bounds(D: DiversityMatrix, seed: int = 0) -> Tuple[float, float]:
    """(smallest, largest) eigenvalue of D.

    A Gram matrix F F' with fewer columns than rows shares its nonzero
    spectrum with the small matrix F'F, and its smallest eigenvalue is 0.
    """
    if D.low_rank:
        G = D.factor.T @ D.factor
        return min(0.0, smallest_eigenvalue(G, seed)), largest_eigenvalue(G, seed)
    return smallest_eigenvalue(D.entries, seed), largest_eigenvalue(D.entries, seed)


def gap_term(k: int, n: int, lambda_max: float) -> float:
    """Rounding slack 2 lambda (k - k^2/n); largest at k = n/2."""
    return 2.0 * lambda_max * (k - k * k / n)


def entropy_uncertainty(p: float) -> float:
    """Binary entropy -p ln p - (1-p) ln(1-p), with 0 ln 0 = 0."""
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"probability must lie in [0, 1], got {p}", "sampler", "entropy_uncertainty")
    return float(-sum(q * np.log(q) for q in (p, 1.0 - p) if q > 0.0))


# --- Relaxed QP ---

def project_capped_simplex(v: np.ndarray, k: float, tol: float = 1e-10) -> np.ndarray:
    """Euclidean projection onto {m : 0 <= m_i <= 1, sum m = k}."""
    v = np.asarray(v, dtype=np.float64)
    n = v.shape[0]
    if not 0 <= k <= n:
        raise DomainError(f"k={k} is infeasible for n={n}", "sampler", "project_capped_simplex")
    if k == 0:
        return np.zeros(n)
    if k == n:
        return np.ones(n)

    # excess(tau) = sum clip(v - tau, 0, 1) - k is piecewise linear and
    # non-increasing, with kinks at v_i - 1 and v_i.
    a = np.sort(v)
    csum = np.concatenate(([0.0], np.cumsum(a)))
    kinks = np.unique(np.concatenate((a - 1.0, a)))

    def excess(tau: np.ndarray) -> np.ndarray:
        lo = np.searchsorted(a, tau, side="right")  # a[lo:] > tau
        hi = np.searchsorted(a, tau + 1.0, side="left")  # a[hi:] >= tau + 1
        return (n - hi) + (csum[hi] - csum[lo]) - (hi - lo) * tau - k

    e = excess(kinks)  # n - k at the first kink, -k at the last
    j = int(np.searchsorted(-e, 0.0, side="left"))  # first kink with excess <= 0
    if e[j] == 0.0:
        tau = float(kinks[j])
    else:
        t0, t1, e0, e1 = kinks[j - 1], kinks[j], e[j - 1], e[j]
        tau = float(t0 + e0 * (t1 - t0) / (e0 - e1))
    m = np.clip(v - tau, 0.0, 1.0)
    if abs(m.sum() - k) > max(tol, 1e-9 * n):
        raise ConsistencyError(
            f"projection sum {m.sum():.12g} misses k={k}", "sampler", "project_capped_simplex")
    return m


def _polish(problem: SelectionProblem, m: np.ndarray, f: float, tol: float = 1e-9):
    """Solve the KKT system on the free set of m; keep it only if feasible and better."""
    D = problem.D.entries
    upper = m >= 1.0 - tol
    free = (m > tol) & ~upper
    nf = int(free.sum())
    if nf == 0:
        return m, f
    r = problem.k - int(upper.sum())
    Dff = D[np.ix_(free, free)]
    rhs_top = -2.0 * D[np.ix_(free, upper)].sum(axis=1)
    A = np.zeros((nf + 1, nf + 1))
    A[:nf, :nf] = 2.0 * Dff
    A[:nf, nf] = 1.0
    A[nf, :nf] = 1.0
    b = np.append(rhs_top, r)
    sol = np.linalg.lstsq(A, b, rcond=None)[0]
    mf = sol[:nf]
    if np.any(mf < -tol) or np.any(mf > 1.0 + tol) or abs(mf.sum() - r) > 1e-8:
        return m, f
    cand = np.zeros_like(m)
    cand[upper] = 1.0
    cand[free] = np.clip(mf, 0.0, 1.0)
    if abs(cand.sum() - problem.k) > 1e-8:
        return m, f
    fc = problem.objective(cand)
    if fc < f:
        return cand, fc
    return m, f


def pg_residual(problem: SelectionProblem, m: np.ndarray, eta: float) -> float:
    """max |m - project(m - eta grad f(m))|: zero exactly at a minimizer."""
    step = project_capped_simplex(m - eta * 2.0 * problem.D.matvec(m), problem.k)
    return float(np.abs(step - m).max())


def _active_pattern(m: np.ndarray, tol: float = 1e-9) -> bytes:
    return (np.where(m <= tol, 0, np.where(m >= 1.0 - tol, 2, 1)).astype(np.int8)).tobytes()


def solve_relaxed(problem: SelectionProblem, cfg: SamplerConfig) -> RelaxedSolution:
    """Accelerated projected gradient from the uniform point, step 1/(2 lambda_max).

    Momentum is reset whenever the extrapolated step would raise the objective,
    so accepted iterates never get worse. Every CHECK_EVERY iterations the
    projected-gradient residual is tested against qp_tol; once the bound/free
    pattern stops changing, the KKT system on the free set is solved directly.
    """
    D = problem.D
    n, k = problem.n, problem.k
    scale = max(1.0, float(np.abs(np.diag(D.entries)).max()) if n else 1.0)
    lam_min, lam = spectrum_bounds(D, cfg.seed)
    # the shifted power iteration is only accurate to a fraction of lambda_max
    psd_tol = PSD_TOL if D.low_rank or n <= DENSE_EIG_LIMIT else 1e-3
    if lam_min < -psd_tol * scale:
        raise DomainError(
            f"diversity matrix is not PSD (smallest eigenvalue {lam_min:.3e})", "sampler", "solve_relaxed")
    m = np.full(n, k / n)
    f = problem.objective(m)
    if lam <= 0.0:
        return RelaxedSolution(m, f, 0, True, 0.0)

    eta = 1.0 / (2.0 * lam)
    y, t = m, 1.0
    pattern = b""
    converged = False
    it = 0
    while it < cfg.qp_max_iters:
        it += 1
        slack = 1e-12 * max(1.0, abs(f))
        m_new = project_capped_simplex(y - eta * 2.0 * D.matvec(y), k)
        f_new = problem.objective(m_new)
        if f_new > f + slack:
            t = 1.0
            m_new = project_capped_simplex(m - eta * 2.0 * D.matvec(m), k)
            f_new = problem.objective(m_new)
            if f_new > f + slack:
                raise ConsistencyError(
                    f"objective rose from {f:.12g} to {f_new:.12g} at iteration {it}", "sampler", "solve_relaxed")
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = m_new + ((t - 1.0) / t_next) * (m_new - m)
        m, f, t = m_new, f_new, t_next

        if it % CHECK_EVERY:
            continue
        if pg_residual(problem, m, eta) < cfg.qp_tol:
            converged = True
            break
        current = _active_pattern(m)
        if current == pattern and current.count(1) <= POLISH_LIMIT:
            cand, fc = _polish(problem, m, f)
            if cand is not m and pg_residual(problem, cand, eta) < cfg.qp_tol:
                m, f = cand, fc
                converged = True
                break
        pattern = current

    m, f = _polish(problem, m, f)
    if not converged:
        converged = pg_residual(problem, m, eta) < cfg.qp_tol
    logger.debug(f"QP n={n} k={k}: f={f:.6g} after {it} iterations (converged={converged})")
    return RelaxedSolution(m, f, it, converged, lam)


# --- Rounding ---

def _rank(values: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Positions sorted by value descending, ties (to 1e-9) by lowest clip id."""
    keys = np.round(values, RANK_DECIMALS)
    return np.lexsort((ids, -keys))


def _check_certificate(sel: BatchSelection, converged: bool) -> None:
    tol = 1e-6 * max(1.0, abs(sel.gap_bound))
    if sel.objective_int > sel.gap_bound + tol:
        raise ConsistencyError(
            f"rounded objective {sel.objective_int:.9g} exceeds bound {sel.gap_bound:.9g}",
            "sampler", "round_topk", ids=sel.ids)
    if sel.relaxed_objective > sel.objective_int + tol:
        msg = f"relaxed objective {sel.relaxed_objective:.9g} above rounded {sel.objective_int:.9g}"
        if converged:
            raise ConsistencyError(msg, "sampler", "round_topk", ids=sel.ids)
        logger.warning(f"{msg} (solver stopped at qp_max_iters)")


def round_topk(sol: RelaxedSolution, problem: SelectionProblem) -> BatchSelection:
    """Set the k largest entries of m to 1 and certify f(m) <= f(m_b) <= 2f(m) + gap."""
    k, n = problem.k, problem.n
    positions = sorted(int(p) for p in _rank(sol.m, problem.ids)[:k])
    mb = np.zeros(n)
    mb[positions] = 1.0
    f_b = problem.objective(mb)
    sel = BatchSelection(
        positions=positions,
        ids=[int(problem.ids[p]) for p in positions],
        objective_int=f_b,
        objective_topk=f_b,
        relaxed_objective=sol.objective,
        gap_bound=2.0 * sol.objective + gap_term(k, n, sol.lambda_max),
        lambda_max=sol.lambda_max,
        converged=sol.converged,
    )
    _check_certificate(sel, sol.converged)
    return sel


def refine_by_swaps(sel: BatchSelection, problem: SelectionProblem, max_swaps: int) -> BatchSelection:
    """Best-improvement exchanges of one picked and one unpicked item.

    Only strictly improving swaps are applied, so the certificate keeps holding.
    """
    D = problem.D.entries
    n = problem.n
    chosen = np.zeros(n, dtype=bool)
    chosen[sel.positions] = True
    if max_swaps <= 0 or chosen.all():
        return sel
    mb = chosen.astype(np.float64)
    g = D @ mb
    f = sel.objective_int
    diag = np.diag(D)
    swaps = 0
    while swaps < max_swaps:
        ins = np.flatnonzero(chosen)
        outs = np.flatnonzero(~chosen)
        # delta[a, b]: drop ins[a], add outs[b]
        delta = (2.0 * (g[outs][None, :] - g[ins][:, None])
                 + diag[ins][:, None] + diag[outs][None, :]
                 - 2.0 * D[np.ix_(ins, outs)])
        a, b = np.unravel_index(int(np.argmin(delta)), delta.shape)
        if delta[a, b] >= -1e-12 * max(1.0, abs(f)):
            break
        i, j = ins[a], outs[b]
        chosen[i], chosen[j] = False, True
        g += D[:, j] - D[:, i]
        f += float(delta[a, b])
        swaps += 1
    if swaps == 0:
        return sel
    positions = [int(p) for p in np.flatnonzero(chosen)]
    mb = chosen.astype(np.float64)
    refined = BatchSelection(
        positions=positions,
        ids=[int(problem.ids[p]) for p in positions],
        objective_int=problem.objective(mb),
        objective_topk=sel.objective_topk,
        relaxed_objective=sel.relaxed_objective,
        gap_bound=sel.gap_bound,
        lambda_max=sel.lambda_max,
        swaps=swaps,
        converged=sel.converged,
    )
    logger.debug(f"Swap refinement: {swaps} swaps, f {sel.objective_int:.6g} -> {refined.objective_int:.6g}")
    return refined


def select_batch(vectors: np.ndarray, ids: Sequence[int], k: int, cfg: SamplerConfig,
                 max_swaps: int = 0) -> BatchSelection:
    """Relaxed QP and top-k rounding over the given normalized vectors, then up to max_swaps exchanges."""
    problem = SelectionProblem(build_diversity(list(vectors)), k, np.asarray(ids))
    sol = solve_relaxed(problem, cfg)
    sel = round_topk(sol, problem)
    return refine_by_swaps(sel, problem, max_swaps)


# --- Sampling loop ---

def _cap_pool(pool: Sequence[int], cfg: SamplerConfig, rng: np.random.Generator) -> List[int]:
    pool = sorted(int(i) for i in pool)
    if cfg.pool_cap is not None and len(pool) > cfg.pool_cap:
        picked = rng.choice(len(pool), size=cfg.pool_cap, replace=False)
        pool = [pool[i] for i in np.sort(picked)]
    return pool


def uncertainty_filter(
    model: MlpModel,
    bank: ClipBank,
    pool: Iterable[int],
    n_query: int,
    cfg: SamplerConfig,
    rng: np.random.Generator,
) -> List[int]:
    """Stochastic pool cap, then the n_query ids most likely to be hotspots (ties: lowest id)."""
    candidates = _cap_pool(pool, cfg, rng)
    if not candidates:
        return []
    p = np.atleast_1d(predict_proba(model, bank.inputs[bank.rows(candidates)]))
    ids = np.asarray(candidates)
    order = _rank(p, ids)[:min(n_query, len(candidates))]
    return [int(ids[i]) for i in order]


def select_initial(bank: ClipBank, k0: int, cfg: SamplerConfig, rng: np.random.Generator) -> BatchSelection:
    """Diversity selection of L0 on the channel vectors, before any model exists."""
    candidates = _cap_pool(bank.ids, cfg, rng)
    k0 = min(k0, len(candidates))
    vectors = bank.init_vectors[bank.rows(candidates)]
    return select_batch(vectors, candidates, k0, cfg, cfg.swap_limit)


def batch_active_sampling(
    bank: ClipBank,
    oracle,
    train_cfg: TrainConfig,
    cfg: SamplerConfig,
    on_record: Optional[Callable[[SelectionRecord], None]] = None,
    on_iteration: Optional[Callable[[int, MlpModel, Dict[int, Label]], None]] = None,
) -> SamplingResult:
    """Label a diverse seed set, then repeat: filter by hotspot probability, pick k, label, update."""
    total = len(bank)
    rng = np.random.default_rng(cfg.seed)
    model = init_model(train_cfg, bank.inputs.shape[1])

    # 1. Initial labeled set
    if total == 0:
        return SamplingResult(model, {}, [], set(), [], oracle.count)
    initial = select_initial(bank, cfg.initial_size, cfg, rng)
    labeled: Dict[int, Label] = dict(zip(initial.ids, oracle.query(initial.ids)))
    order: List[int] = list(initial.ids)
    train(model, bank.inputs[bank.rows(order)], [labeled[i] for i in order],
          train_cfg.epochs_initial, train_cfg, rng)
    logger.info(f"Initial set: {len(order)} clips labeled, "
                f"{sum(l is Label.HOTSPOT for l in labeled.values())} hotspots")
    if on_iteration:
        on_iteration(0, model, labeled)

    unlabeled = set(int(i) for i in bank.ids) - set(order)
    discarded: Set[int] = set()
    records: List[SelectionRecord] = []
    iteration = 0

    # 2. Sampling loop
    while unlabeled:
        iteration += 1
        queried = uncertainty_filter(model, bank, unlabeled, cfg.n_query, cfg, rng)
        unlabeled.difference_update(queried)
        k_eff = min(cfg.k, len(queried))
        vectors = embed(model, bank.inputs[bank.rows(queried)])
        sel = select_batch(np.atleast_2d(vectors), queried, k_eff, cfg)

        old_rows = bank.rows(order)
        old_labels = [labeled[i] for i in order]
        new_labels = oracle.query(sel.ids)
        labeled.update(zip(sel.ids, new_labels))
        order.extend(sel.ids)
        discarded.update(set(queried) - set(sel.ids))

        if len(labeled) + len(discarded) + len(unlabeled) != total:
            raise ConsistencyError(
                f"clip accounting broke at iteration {iteration}: "
                f"{len(labeled)} + {len(discarded)} + {len(unlabeled)} != {total}",
                "sampler", "batch_active_sampling")

        incremental_update(model, bank.inputs[bank.rows(sel.ids)], new_labels,
                           bank.inputs[old_rows], old_labels, train_cfg, rng)

        record = SelectionRecord(
            iteration=iteration,
            selected_ids=sel.ids,
            f_relaxed=sel.relaxed_objective,
            f_rounded=sel.objective_int,
            lambda_max=sel.lambda_max,
            gap_bound=sel.gap_bound,
            litho_total=oracle.count,
            pool_remaining=len(unlabeled),
            discarded_total=len(discarded),
            seed=cfg.seed,
            qp_converged=sel.converged,
        )
        records.append(record)
        if on_record:
            on_record(record)
        if on_iteration:
            on_iteration(iteration, model, labeled)
        logger.info(f"Iteration {iteration}: picked {len(sel.ids)}/{len(queried)}, "
                    f"f={sel.objective_int:.4g} (bound {sel.gap_bound:.4g}), "
                    f"litho={oracle.count}, remaining={len(unlabeled)}")

    return SamplingResult(model, labeled, list(initial.ids), discarded, records, oracle.count)
