"""Synthetic data generation and the convergence/estimation experiments.

Provides the planted-model corpus generator used by the recovery tests
plus the four experiment drivers behind the `synth` CLI subcommand:

* newton_convergence: per-iteration residual |A_p(kappa_n) - r_bar| of the
  concentration solve on one sampled dataset;
* estimation_vs_n / estimation_vs_kappa / estimation_vs_p: relative
  estimation error of kappa (and the cosine error of the mean direction)
  over grids of sample size, concentration, and dimension.

Every driver returns plot-ready (x, metric, value) rows; the CLI writes
them as CSV.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .emission import EmissionConfig, StateParams
from .hmm_core import ShmmModel
from .records import SECONDS_PER_DAY, SemanticRecord, Trace
from .vmf import VmfParams, fit_vmf, sample_vmf, solve_concentration


def orthonormal_directions(k: int, p: int, seed: int) -> np.ndarray:
    """k mutually orthogonal unit vectors in R^p (k <= p), seeded."""
    if k > p:
        raise ValueError("cannot make more orthonormal directions than dimensions")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((p, k)))
    return q.T.copy()


def planted_model(
    k: int,
    p: int,
    seed: int,
    kappas: Sequence[float] | None = None,
    loc_centers: np.ndarray | None = None,
    loc_cov: np.ndarray | None = None,
    time_means: Sequence[float] | None = None,
    time_sigma: float = 3600.0,
    self_prob: float = 0.4,
) -> ShmmModel:
    """A K-state generative model with controllable per-modality separation.

    Defaults: state locations on a small ring, time-of-day means spread
    across the working day, mutually orthogonal text directions, and a
    sticky Dirichlet-like transition matrix.
    """
    rng = np.random.default_rng(seed)
    if kappas is None:
        kappas = np.linspace(40.0, 120.0, k)
    if loc_centers is None:
        angles = 2.0 * math.pi * np.arange(k) / k
        loc_centers = 0.1 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    if loc_cov is None:
        loc_cov = np.diag([4e-4, 4e-4])
    if time_means is None:
        time_means = np.linspace(8.0, 20.0, k) * 3600.0
    directions = orthonormal_directions(k, p, seed + 1)

    states = []
    for j in range(k):
        states.append(
            StateParams(
                mu_t=float(time_means[j]),
                sigma_t=time_sigma,
                mu_l=np.asarray(loc_centers[j], dtype=float),
                cov_l=np.asarray(loc_cov, dtype=float),
                text=VmfParams(mu=directions[j], kappa=float(kappas[j]), p=p),
            )
        )
    raw = rng.uniform(0.5, 1.5, size=(k, k))
    trans = raw / raw.sum(axis=1, keepdims=True) * (1.0 - self_prob)
    trans[np.arange(k), np.arange(k)] += self_prob
    trans /= trans.sum(axis=1, keepdims=True)
    pi = rng.uniform(0.5, 1.5, size=k)
    pi /= pi.sum()
    return ShmmModel(
        n_states=k,
        pi=pi,
        trans=trans,
        states=states,
        config=EmissionConfig.shmm(),
        embedding_dim=p,
    )


def sample_corpus(model: ShmmModel, n_traces: int, trace_len: int, seed: int) -> list[Trace]:
    """Simulate traces from a model (Markov chain + per-state emissions).

    Deterministic given the seed.  Absolute timestamps step by one hour so
    the generated traces survive any segmentation threshold >= 1 h.
    """
    rng = np.random.default_rng(seed)
    k = model.n_states
    n = n_traces * trace_len

    paths = np.empty((n_traces, trace_len), dtype=int)
    paths[:, 0] = rng.choice(k, size=n_traces, p=model.pi)
    for t in range(1, trace_len):
        prev = paths[:, t - 1]
        nxt = np.empty(n_traces, dtype=int)
        for j in range(k):
            mask = prev == j
            cnt = int(mask.sum())
            if cnt:
                nxt[mask] = rng.choice(k, size=cnt, p=model.trans[j])
        paths[:, t] = nxt
    flat = paths.reshape(-1)

    times = np.empty(n)
    locs = np.empty((n, 2))
    embeds = np.empty((n, model.embedding_dim))
    for j in range(k):
        mask = flat == j
        cnt = int(mask.sum())
        if cnt == 0:
            continue
        state = model.states[j]
        times[mask] = rng.normal(state.mu_t, state.sigma_t, size=cnt)
        chol = np.linalg.cholesky(state.cov_l)
        locs[mask] = state.mu_l + rng.standard_normal((cnt, 2)) @ chol.T
        embeds[mask] = sample_vmf(state.text, cnt, seed=int(rng.integers(2 ** 62)))
    times = np.clip(times, 0.0, SECONDS_PER_DAY - 1e-6)

    traces = []
    idx = 0
    for i in range(n_traces):
        records = []
        for t in range(trace_len):
            records.append(
                SemanticRecord(
                    user_id=f"synth-{i}",
                    t_abs=float(t) * 3600.0,
                    t_day=float(times[idx]),
                    loc=locs[idx],
                    embedding=embeds[idx],
                )
            )
            idx += 1
        traces.append(Trace(records))
    return traces


# ---------------------------------------------------------------------------
# experiment drivers


def _sample_resultant(p: int, kappa: float, n: int, seed: int):
    mu = np.zeros(p)
    mu[0] = 1.0
    samples = sample_vmf(VmfParams(mu=mu, kappa=kappa, p=p), n, seed)
    return mu, samples


def newton_convergence(p: int = 100, kappa: float = 100.0, n: int = 100_000, seed: int = 0):
    """Residual per Newton iteration on one sampled dataset.

    Row 0 is the closed-form initializer; rows 1.. are Newton steps.
    """
    _, samples = _sample_resultant(p, kappa, n, seed)
    r_bar = float(np.linalg.norm(samples.sum(axis=0))) / n
    trace = solve_concentration(r_bar, p)
    return [(i, "residual", float(res)) for i, res in enumerate(trace.residuals)]


def _fit_errors(p: int, kappa: float, n: int, seed: int):
    mu, samples = _sample_resultant(p, kappa, n, seed)
    fitted = fit_vmf(samples)
    kappa_err = abs(fitted.kappa - kappa) / kappa
    mu_err = 1.0 - float(fitted.mu @ mu)
    return kappa_err, mu_err


def estimation_vs_n(
    p: int = 100,
    kappa: float = 100.0,
    n_grid: Sequence[int] = (100, 1_000, 10_000, 100_000),
    n_seeds: int = 20,
    seed: int = 0,
):
    """Estimation error vs sample size; per-seed rows plus per-x means."""
    rows = []
    for n in n_grid:
        k_errs, m_errs = [], []
        for s in range(n_seeds):
            k_err, m_err = _fit_errors(p, kappa, int(n), seed + 1000 * s + int(n))
            rows.append((int(n), "kappa_rel_error", k_err))
            rows.append((int(n), "mu_cos_error", m_err))
            k_errs.append(k_err)
            m_errs.append(m_err)
        rows.append((int(n), "kappa_rel_error_mean", float(np.mean(k_errs))))
        rows.append((int(n), "mu_cos_error_mean", float(np.mean(m_errs))))
    return rows


def estimation_vs_kappa(
    p: int = 100,
    kappa_grid: Sequence[float] = (1.0, 5.0, 10.0, 50.0, 100.0, 500.0),
    n: int = 100_000,
    n_seeds: int = 3,
    seed: int = 0,
):
    """Estimation error vs true concentration at fixed p and N."""
    rows = []
    for kappa in kappa_grid:
        k_errs, m_errs = [], []
        for s in range(n_seeds):
            k_err, m_err = _fit_errors(p, float(kappa), n, seed + 1000 * s + int(kappa))
            rows.append((float(kappa), "kappa_rel_error", k_err))
            rows.append((float(kappa), "mu_cos_error", m_err))
            k_errs.append(k_err)
            m_errs.append(m_err)
        rows.append((float(kappa), "kappa_rel_error_mean", float(np.mean(k_errs))))
        rows.append((float(kappa), "mu_cos_error_mean", float(np.mean(m_errs))))
    return rows


def estimation_vs_p(
    p_grid: Sequence[int] = (2, 10, 50, 100, 200),
    kappa: float = 100.0,
    n: int = 100_000,
    n_seeds: int = 3,
    seed: int = 0,
):
    """Estimation error vs dimension at fixed kappa and N."""
    rows = []
    for p in p_grid:
        k_errs, m_errs = [], []
        for s in range(n_seeds):
            k_err, m_err = _fit_errors(int(p), kappa, n, seed + 1000 * s + int(p))
            rows.append((int(p), "kappa_rel_error", k_err))
            rows.append((int(p), "mu_cos_error", m_err))
            k_errs.append(k_err)
            m_errs.append(m_err)
        rows.append((int(p), "kappa_rel_error_mean", float(np.mean(k_errs))))
        rows.append((int(p), "mu_cos_error_mean", float(np.mean(m_errs))))
    return rows


EXPERIMENTS = {
    "newton_convergence": newton_convergence,
    "estimation_vs_n": estimation_vs_n,
    "estimation_vs_kappa": estimation_vs_kappa,
    "estimation_vs_p": estimation_vs_p,
}
