"""Multi-snapshot variational line spectral estimation with heteroscedastic noise.

Pseudo observations ``y_l = A(theta) w_l + n_l`` with ``n_l ~ CN(0, diag(sig2[:, l]))``
share one frequency profile across snapshots. Component weights are
Bernoulli-Gaussian (activation probability ``rho``, variance ``tau``), the
frequencies have uniform priors and gridded posteriors.

Weight/covariance arrays are stacked over snapshots: ``w`` is (L, K) and
``C`` is (L, K, K) for the active set ``support`` (K entries).

Internally the steering phase is referenced to a central sample ``offset``,
i.e. the model uses ``exp(j (m - offset) theta)``. With a circularly symmetric
weight prior this is the same model (the weights absorb the phase
``exp(j offset theta)``), but it decorrelates frequency and weight phase in
the factorized posterior, which makes the coordinate updates converge in a
few sweeps instead of dozens. ``offset = 0`` gives the uncentered form.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .circular import fit_vonmises, grid_size_for, trig_density_moments

RHO_INIT = 0.5
TAU_FLOOR = 1e-12
VAR_FLOOR = 1e-11


@dataclass(frozen=True)
class FreqPosterior:
    mu: float
    kappa: float
    moments: np.ndarray  # E[e^{j n theta}], n = 0..N-1

    @property
    def theta_hat(self) -> float:
        return float(np.angle(self.moments[1]))


@dataclass
class MvalseOptions:
    max_sweeps: int = 500
    tol: float = 1e-6
    grid_size: int | None = None
    n_init: int | None = None  # components peeled at initialization, default N // 2
    flip_budget: int | None = None  # greedy flips per sweep, default 4 * N
    reset_inactive: bool = True  # inactive components fall back to the uniform prior
    center: bool = True  # reference steering phases to the middle observed sample


@dataclass
class MvalseState:
    N: int
    rows: np.ndarray
    ytil: np.ndarray  # (M, L)
    sig2: np.ndarray  # (M, L)
    moments: np.ndarray  # (N, N): row i holds E[a_N(theta_i)]
    mu: np.ndarray
    kappa: np.ndarray
    support: np.ndarray  # sorted active component indices
    w: np.ndarray  # (L, K)
    C: np.ndarray  # (L, K, K)
    rho: float
    tau: float
    sweeps: int = 0
    converged: bool = False
    history: list = field(default_factory=list)
    offset: int = 0

    @property
    def lags(self) -> np.ndarray:
        """Observed sample indices relative to the phase reference."""
        return self.rows - self.offset

    @property
    def K(self) -> int:
        return int(self.support.size)

    @property
    def L(self) -> int:
        return int(self.ytil.shape[1])

    @property
    def s(self) -> np.ndarray:
        """Boolean support indicator of length N."""
        mask = np.zeros(self.N, dtype=bool)
        mask[self.support] = True
        return mask

    def a_hat(self, comps=None) -> np.ndarray:
        """Expected steering vectors over the observed rows, (M, len(comps))."""
        comps = np.arange(self.N) if comps is None else comps
        return steer_mean(self.moments[comps], self.lags)

    def posterior(self, i: int) -> FreqPosterior:
        return FreqPosterior(float(self.mu[i]), float(self.kappa[i]), self.moments[i].copy())

    def theta_hat(self) -> np.ndarray:
        return np.angle(self.moments[self.support, 1])

    def z_full(self) -> np.ndarray:
        """Reconstruction on all N indices, (N, L)."""
        if self.K == 0:
            return np.zeros((self.N, self.L), dtype=complex)
        A = steer_mean(self.moments[self.support], np.arange(self.N) - self.offset)
        return A @ self.w.T

    def copy(self) -> "MvalseState":
        return copy.deepcopy(self)


def steer_mean(moments, lags) -> np.ndarray:
    """``E[exp(j r theta)]`` for signed integer lags ``r``, shape (len(lags), n_comp).

    ``moments`` holds nonnegative-lag moments row-wise; negative lags use
    ``E[exp(-j n theta)] = conj(E[exp(j n theta)])``.
    """
    lags = np.asarray(lags)
    m = np.asarray(moments)[:, np.abs(lags)].T
    neg = lags < 0
    if np.any(neg):
        m[neg] = m[neg].conj()
    return m


def lag_coefficients(lags, eta):
    """Fold ``Re sum_i conj(eta_i) e^{j r_i theta}`` over signed lags onto nonnegative ones."""
    lags = np.asarray(lags)
    c = np.where(lags >= 0, np.conj(eta), eta)
    return np.abs(lags), c


def _uniform_moments(N: int) -> np.ndarray:
    m = np.zeros(N, dtype=complex)
    m[0] = 1.0
    return m


# --- weights and support -------------------------------------------------

def compute_J_h(a_hat, sig2, ytil):
    """Per-snapshot Gram matrices and matched-filter outputs.

    ``J[l, i, j] = a_i^H Sigma_l^{-1} a_j`` off the diagonal and
    ``tr(Sigma_l^{-1})`` on it; ``h[l] = A^H Sigma_l^{-1} y_l``.
    """
    P = 1.0 / sig2
    L = P.shape[1]
    n = a_hat.shape[1]
    J = np.empty((L, n, n), dtype=complex)
    h = np.empty((L, n), dtype=complex)
    Ah = a_hat.conj().T
    for l in range(L):
        PA = a_hat * P[:, l, None]
        J[l] = Ah @ PA
        h[l] = Ah @ (P[:, l] * ytil[:, l])
    tr = P.sum(axis=0)
    d = np.arange(n)
    J[:, d, d] = tr[:, None]
    return J, h


def refresh_J_h(J, h, a_hat, sig2, ytil, cols):
    """Recompute in place the rows/columns of ``J`` and entries of ``h`` for ``cols``."""
    cols = np.asarray(cols, dtype=np.int64)
    if cols.size == 0:
        return
    P = 1.0 / sig2
    Ach = a_hat[:, cols].conj().T
    for l in range(P.shape[1]):
        part = (Ach * P[:, l]) @ a_hat
        J[l, cols, :] = part
        J[l, :, cols] = part.conj()
        h[l, cols] = Ach @ (P[:, l] * ytil[:, l])
    J[:, cols, cols] = P.sum(axis=0)[:, None]


def _activation_terms(J, h, S, w, C, tau):
    """``(u, v, CJ)`` for activating every component given active list ``S``.

    ``u``, ``v`` are (L, N); ``CJ`` is (L, |S|, N) = C_S J[S, :].
    """
    L, N = h.shape
    tr = J[:, 0, 0].real
    if len(S) == 0:
        v = 1.0 / (tr[:, None] + 1.0 / tau) * np.ones((L, N))
        return v * h, v, np.zeros((L, 0, N), dtype=complex)
    Js = J[:, S, :]
    CJ = C @ Js
    quad = np.einsum("lsn,lsn->ln", Js.conj(), CJ).real
    schur = np.maximum(tr[:, None] + 1.0 / tau - quad, 1e-300)
    v = 1.0 / schur
    q = h - np.einsum("lsn,ls->ln", Js.conj(), w)
    return v * q, v, CJ


def _log_odds(rho):
    return np.log(rho / (1.0 - rho))


def delta_activate(k, J, h, S, w, C, rho, tau):
    """Gain in ln Z from activating inactive component ``k``.

    Returns ``(delta, u, v)`` with per-snapshot ``u``, ``v`` of length L.
    """
    S = list(S)
    if k in S:
        raise ValueError(f"component {k} is already active")
    u, v, _ = _activation_terms(J, h, S, w, C, tau)
    u, v = u[:, k], v[:, k]
    delta = np.sum(np.log(v / tau) + np.abs(u) ** 2 / v) + _log_odds(rho)
    return float(delta), u, v


def delta_deactivate(k, S, w, C, rho, tau):
    """Gain in ln Z from deactivating active component ``k``."""
    S = list(S)
    p = S.index(k)
    ckk = C[:, p, p].real
    return float(np.sum(-np.log(ckk / tau) - np.abs(w[:, p]) ** 2 / ckk) - _log_odds(rho))


def _activate(S, w, C, k, u, v, c):
    """Append component ``k``; ``c`` is (L, |S|) = C_S j_k."""
    L, s = w.shape
    Cn = np.empty((L, s + 1, s + 1), dtype=complex)
    Cn[:, :s, :s] = C + v[:, None, None] * c[:, :, None] * c[:, None, :].conj()
    Cn[:, :s, s] = -v[:, None] * c
    Cn[:, s, :s] = Cn[:, :s, s].conj()
    Cn[:, s, s] = v
    wn = np.empty((L, s + 1), dtype=complex)
    wn[:, :s] = w - u[:, None] * c
    wn[:, s] = u
    return S + [k], wn, Cn


def _deactivate(S, w, C, p):
    keep = [i for i in range(len(S)) if i != p]
    ckk = C[:, p, p].real
    c = C[:, keep, p]
    Cn = C[:, keep][:, :, keep] - c[:, :, None] * c[:, None, :].conj() / ckk[:, None, None]
    wn = w[:, keep] - (w[:, p] / ckk)[:, None] * c
    Cn = 0.5 * (Cn + Cn.conj().transpose(0, 2, 1))
    return [S[i] for i in keep], wn, Cn


def apply_flip(k, J, h, S, w, C, tau):
    """Flip component ``k`` in or out of the active list with rank-one updates.

    Returns the new ``(S, w, C)``; activation appends ``k`` at the end.
    """
    S = list(S)
    if k in S:
        return _deactivate(S, w, C, S.index(k))
    u, v, CJ = _activation_terms(J, h, S, w, C, tau)
    return _activate(S, w, C, k, u[:, k], v[:, k], CJ[:, :, k])


def greedy_support(J, h, rho, tau, max_flips, max_active=None, S=None, w=None, C=None):
    """Greedy local maximization of ln Z over the support, one flip at a time.

    Starts from the given active list (empty by default) and flips the
    component with the largest positive gain until none remains. Ties go to
    the lowest index. Returns ``(S, w, C, flips)`` with ``S`` sorted.
    """
    L, N = h.shape
    if max_active is None:
        max_active = N
    if S is None:
        S = []
        w = np.zeros((L, 0), dtype=complex)
        C = np.zeros((L, 0, 0), dtype=complex)
    S = list(S)
    lo = _log_odds(rho)
    flips = 0
    while flips < max_flips:
        u, v, CJ = _activation_terms(J, h, S, w, C, tau)
        delta = np.sum(np.log(v / tau) + np.abs(u) ** 2 / v, axis=0) + lo
        if len(S) >= max_active:
            delta[:] = -np.inf
        if S:
            ckk = np.einsum("lii->li", C).real
            delta[S] = np.sum(-np.log(ckk / tau) - np.abs(w) ** 2 / ckk, axis=0) - lo
        k = int(np.argmax(delta))
        if not delta[k] > 0:
            break
        if k in S:
            S, w, C = _deactivate(S, w, C, S.index(k))
        else:
            S, w, C = _activate(S, w, C, k, u[:, k], v[:, k], CJ[:, :, k])
        flips += 1
    order = np.argsort(S)
    S = np.asarray(S, dtype=np.int64)[order]
    return S, w[:, order], C[:, order][:, :, order], flips


def update_hyperparams(N, w, C, rho, tau):
    """Maximizers of the bound in ``rho`` and ``tau``; an empty support keeps the old values."""
    L, K = w.shape
    if K == 0:
        return rho, tau
    rho_new = min(max(K / N, 1.0 / N), 1.0 - 1.0 / N)
    energy = np.sum(np.abs(w) ** 2) + np.einsum("lii->", C).real
    tau_new = max(energy / (L * K), TAU_FLOOR)
    return rho_new, tau_new


# --- frequencies -----------------------------------------------------------

def eta_vector(state: MvalseState, k: int) -> np.ndarray:
    """Natural parameter (length M) of the frequency posterior of active ``k``, summed over snapshots."""
    S = list(state.support)
    p = S.index(k)
    A = state.a_hat(state.support)
    P = 1.0 / state.sig2
    ak = A[:, p]
    resid = state.ytil - A @ state.w.T + np.outer(ak, state.w[:, p])
    cross = A @ state.C[:, :, p].T - np.outer(ak, state.C[:, p, p])
    eta = 2.0 * P * (resid * state.w[:, p].conj() - cross)
    return eta.sum(axis=1)


def update_frequency(state: MvalseState, k: int, grid_size: int | None = None) -> FreqPosterior:
    """Posterior of the frequency of active component ``k`` given everything else."""
    G = grid_size or grid_size_for(state.N)
    eta = eta_vector(state, k)
    idx, coef = lag_coefficients(state.lags, eta)
    moments = trig_density_moments(idx, coef, state.N, G)
    mu, kappa = fit_vonmises(moments)
    return FreqPosterior(mu, kappa, moments)


def signal_posterior(a_hat_s, w, C, var_floor: float = VAR_FLOOR):
    """Mean and variance of each observed sample under the factored posterior.

    ``a_hat_s`` is (M, K) over the active set; returns (M, L) arrays.
    """
    M = a_hat_s.shape[0]
    L, K = w.shape
    if K == 0:
        return np.zeros((M, L), dtype=complex), np.full((M, L), var_floor)
    z = a_hat_s @ w.T
    quad = np.einsum("mi,lij,mj->ml", a_hat_s, C, a_hat_s.conj()).real
    abs2 = np.abs(a_hat_s) ** 2
    ww = np.sum(np.abs(w) ** 2, axis=1)
    trC = np.einsum("lii->l", C).real
    dC = np.einsum("lii->li", C).real
    v = quad + (ww[None, :] - abs2 @ (np.abs(w) ** 2).T) + (trC[None, :] - abs2 @ dC.T)
    return z, np.maximum(v, var_floor)


# --- initialization and the sweep loop ------------------------------------

def init_noncoherent(ytil, sig2, rows, N, opts: MvalseOptions | None = None) -> MvalseState:
    """Sequential single-component initialization from lag products.

    For each new component the frequency posterior is the marginal
    likelihood of one sinusoid (weight integrated out) fitted to the current
    residual, computed from precision-weighted lag products of all snapshots.
    The component is then added with the rank-one weight update.
    """
    opts = opts or MvalseOptions()
    rows = np.asarray(rows, dtype=np.int64)
    ytil = np.asarray(ytil, dtype=complex)
    sig2 = np.asarray(sig2, dtype=float)
    M, L = ytil.shape
    G = opts.grid_size or grid_size_for(N)
    P = 1.0 / sig2
    tr = P.sum(axis=0)

    rho = RHO_INIT
    power = np.sum(P * np.abs(ytil) ** 2) / np.sum(P)
    noise = M * L / np.sum(P)
    tau = max(power - noise, 1e-2 * power, TAU_FLOOR) / (rho * N)

    moments = np.tile(_uniform_moments(N), (N, 1))
    mu = np.zeros(N)
    kappa = np.zeros(N)
    n_init = opts.n_init if opts.n_init is not None else N // 2
    n_init = max(0, min(n_init, M - 1, N))

    offset = int(np.rint(rows.mean())) if opts.center else 0
    rlag = rows - offset
    S: list = []
    w = np.zeros((L, 0), dtype=complex)
    C = np.zeros((L, 0, 0), dtype=complex)
    lags = np.arange(1, N)
    for i in range(n_init):
        A = steer_mean(moments[S], rlag) if S else np.zeros((M, 0), dtype=complex)
        resid = ytil - A @ w.T
        X = np.zeros((2 * N, L), dtype=complex)
        X[rows] = P * resid
        F = np.fft.fft(X, axis=0)
        R = np.fft.ifft(np.abs(F) ** 2, axis=0)[1:N]  # sum_p x[p+n] conj(x[p])
        coef = (2.0 * R.conj() / (tr + 1.0 / tau)).sum(axis=1)
        if not np.any(np.abs(coef) > 0):
            break
        m_i = trig_density_moments(lags, coef, N, G)
        moments[i] = m_i
        mu[i], kappa[i] = fit_vonmises(m_i)
        a_i = steer_mean(m_i[None, :], rlag)[:, 0]
        Anew = np.column_stack([A, a_i])
        J, h = compute_J_h(Anew, sig2, ytil)
        s = len(S)
        u, v, CJ = _activation_terms(J, h, list(range(s)), w, C, tau)
        idx_list, w, C = _activate(list(range(s)), w, C, s, u[:, s], v[:, s], CJ[:, :, s])
        S.append(i)

    support = np.asarray(S, dtype=np.int64)
    return MvalseState(N, rows, ytil, sig2, moments, mu, kappa, support, w, C, rho, tau,
                       offset=offset)


def _sweep(state: MvalseState, opts: MvalseOptions, G: int, J, h) -> None:
    """One pass over support, hyperparameters and active frequencies.

    ``J`` and ``h`` must match the current moments; they are refreshed in place.
    """
    N = state.N
    budget = opts.flip_budget if opts.flip_budget is not None else 4 * N
    S, w, C, _ = greedy_support(J, h, state.rho, state.tau, budget,
                                max_active=state.rows.size - 1)
    state.support, state.w, state.C = S, w, C
    state.rho, state.tau = update_hyperparams(N, w, C, state.rho, state.tau)
    for k in S:
        post = update_frequency(state, int(k), G)
        state.moments[k] = post.moments
        state.mu[k], state.kappa[k] = post.mu, post.kappa
    changed = S
    if opts.reset_inactive:
        off = np.setdiff1d(np.arange(N), S)
        off = off[state.kappa[off] > 0]
        state.moments[off] = _uniform_moments(N)
        state.mu[off] = 0.0
        state.kappa[off] = 0.0
        changed = np.union1d(S, off)
    refresh_J_h(J, h, state.a_hat(), state.sig2, state.ytil, changed)


def _w_full(state: MvalseState) -> np.ndarray:
    out = np.zeros((state.L, state.N), dtype=complex)
    out[:, state.support] = state.w
    return out


def run_inner(ytil, sig2, rows, N, warm_start: MvalseState | None = None,
              opts: MvalseOptions | None = None) -> MvalseState:
    """Sweep weights/support, hyperparameters and frequencies until settled.

    Stops after ``opts.max_sweeps`` sweeps or once the support is unchanged
    and the weights moved by less than ``opts.tol`` (relative Frobenius).
    ``warm_start`` is copied, never modified.
    """
    opts = opts or MvalseOptions()
    ytil = np.asarray(ytil, dtype=complex)
    sig2 = np.asarray(sig2, dtype=float)
    if ytil.shape != sig2.shape or ytil.shape[0] != len(rows):
        raise ValueError("pseudo observations, variances and rows disagree in shape")
    G = opts.grid_size or grid_size_for(N)
    if warm_start is None:
        state = init_noncoherent(ytil, sig2, rows, N, opts)
    else:
        state = warm_start.copy()
        state.ytil, state.sig2 = ytil, sig2
        state.converged = False
    state.sweeps = 0
    state.history = []
    prev_s = state.s
    prev_w = _w_full(state)
    J, h = compute_J_h(state.a_hat(), sig2, ytil)
    for _ in range(opts.max_sweeps):
        _sweep(state, opts, G, J, h)
        state.sweeps += 1
        cur_w = _w_full(state)
        same = np.array_equal(prev_s, state.s)
        denom = np.linalg.norm(prev_w)
        change = np.linalg.norm(cur_w - prev_w) / denom if denom > 0 else np.inf
        if state.K == 0 and not prev_s.any():
            change = 0.0
        state.history.append((state.K, float(change)))
        if same and change < opts.tol:
            state.converged = True
            break
        prev_s, prev_w = state.s, cur_w
    return state
