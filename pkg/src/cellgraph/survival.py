"""Prognostic evaluation: ridge-penalized Cox regression, median-risk
stratification, Kaplan-Meier curves, log-rank test, concordance index."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc


@dataclass
class SurvivalRecord:
    patient_id: str
    covariates: np.ndarray
    time: float                 # days, > 0
    event: int                  # 1 death, 0 censored

    def __post_init__(self):
        self.covariates = np.asarray(self.covariates, dtype=np.float64)
        if self.time <= 0:
            raise ValueError("time must be positive")
        if self.event not in (0, 1):
            raise ValueError("event must be 0 or 1")


@dataclass
class CoxModel:
    beta: np.ndarray
    penalty: float
    mean: np.ndarray
    std: np.ndarray
    converged: bool
    iterations: int
    final_grad_norm: float

    def risk_scores(self, records):
        x = np.stack([r.covariates for r in records])
        return ((x - self.mean) / self.std) @ self.beta


def _partial_loglik(beta, x, times, events, penalty):
    """Breslow partial log-likelihood with a ridge penalty."""
    eta = x @ beta
    order = np.argsort(-times, kind="stable")   # decreasing time
    ll = 0.0
    running = 0.0
    exp_eta = np.exp(eta)
    # walk from latest to earliest; at each event time the risk set is all
    # subjects with time >= t, accumulated incrementally (ties via Breslow)
    i = 0
    ordered = order
    n = len(times)
    while i < n:
        j = i
        t = times[ordered[i]]
        while j < n and times[ordered[j]] == t:
            running += exp_eta[ordered[j]]
            j += 1
        for k in range(i, j):
            idx = ordered[k]
            if events[idx]:
                ll += eta[idx] - np.log(running)
        i = j
    return ll - 0.5 * penalty * float(beta @ beta)


def _grad_hess(beta, x, times, events, penalty):
    eta = x @ beta
    exp_eta = np.exp(eta)
    order = np.argsort(-times, kind="stable")
    n, d = x.shape
    grad = np.zeros(d)
    hess = np.zeros((d, d))
    s0 = 0.0
    s1 = np.zeros(d)
    s2 = np.zeros((d, d))
    i = 0
    while i < n:
        j = i
        t = times[order[i]]
        while j < n and times[order[j]] == t:
            idx = order[j]
            w = exp_eta[idx]
            s0 += w
            s1 += w * x[idx]
            s2 += w * np.outer(x[idx], x[idx])
            j += 1
        for k in range(i, j):
            idx = order[k]
            if events[idx]:
                xbar = s1 / s0
                grad += x[idx] - xbar
                hess -= s2 / s0 - np.outer(xbar, xbar)
        i = j
    grad -= penalty * beta
    hess -= penalty * np.eye(d)
    return grad, hess


def cox_fit(records, penalty=0.1, tol=1e-6, max_iter=100):
    """Newton iterations with step-halving on the penalized Breslow partial
    likelihood; covariates are z-scored internally."""
    if not records:
        raise ValueError("no records")
    ids = [r.patient_id for r in records]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate patient ids")
    events = np.array([r.event for r in records])
    if events.sum() == 0:
        raise ValueError("no events in the data")
    x_raw = np.stack([r.covariates for r in records])
    mu = x_raw.mean(axis=0)
    sd = np.maximum(x_raw.std(axis=0), 1e-12)
    x = (x_raw - mu) / sd
    times = np.array([r.time for r in records], dtype=np.float64)
    d = x.shape[1]
    beta = np.zeros(d)
    ll = _partial_loglik(beta, x, times, events, penalty)
    converged = False
    grad_norm = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        grad, hess = _grad_hess(beta, x, times, events, penalty)
        grad_norm = float(np.abs(grad).max())
        if grad_norm < tol:
            converged = True
            break
        step = np.linalg.solve(-hess, grad)
        # step-halving guarantees the objective never decreases
        scale = 1.0
        for _ in range(30):
            candidate = beta + scale * step
            new_ll = _partial_loglik(candidate, x, times, events, penalty)
            if new_ll >= ll:
                beta, ll = candidate, new_ll
                break
            scale *= 0.5
    return CoxModel(beta=beta, penalty=penalty, mean=mu, std=sd,
                    converged=converged, iterations=it, final_grad_norm=grad_norm)


def risk_split(model, records):
    """(high, low) groups about the median risk; ties go to the low group."""
    risks = model.risk_scores(records)
    median = np.median(risks)
    high = [r for r, s in zip(records, risks) if s > median]
    low = [r for r, s in zip(records, risks) if s <= median]
    return high, low


def kaplan_meier(times, events):
    """Product-limit estimator; returns (event_times, survival) step points.

    Only times with at least one event create a step.
    """
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=np.int64)
    if len(times) == 0:
        raise ValueError("empty input")
    if np.any(times <= 0):
        raise ValueError("times must be positive")
    order = np.argsort(times, kind="stable")
    times, events = times[order], events[order]
    s = 1.0
    step_t, step_s = [], []
    n = len(times)
    i = 0
    at_risk = n
    while i < n:
        j = i
        t = times[i]
        deaths = 0
        while j < n and times[j] == t:
            deaths += events[j]
            j += 1
        if deaths:
            s *= 1.0 - deaths / at_risk
            step_t.append(t)
            step_s.append(s)
        at_risk -= (j - i)
        i = j
    return np.array(step_t), np.array(step_s)


def _chi2_sf_1df(stat):
    """Survival function of chi-square with one degree of freedom via the
    regularized lower incomplete gamma."""
    if stat <= 0:
        return 1.0
    return float(1.0 - gammainc(0.5, stat / 2.0))


def logrank(times_a, events_a, times_b, events_b):
    """Two-group log-rank test; returns (chi2 statistic, p-value)."""
    times_a = np.asarray(times_a, dtype=np.float64)
    times_b = np.asarray(times_b, dtype=np.float64)
    events_a = np.asarray(events_a, dtype=np.int64)
    events_b = np.asarray(events_b, dtype=np.int64)
    if len(times_a) == 0 or len(times_b) == 0:
        raise ValueError("both groups must be nonempty")
    all_event_times = np.unique(np.concatenate([times_a[events_a == 1],
                                                times_b[events_b == 1]]))
    if len(all_event_times) == 0:
        return 0.0, 1.0
    observed_a = 0.0
    expected_a = 0.0
    variance = 0.0
    for t in all_event_times:
        n_a = np.sum(times_a >= t)
        n_b = np.sum(times_b >= t)
        n = n_a + n_b
        d_a = np.sum((times_a == t) & (events_a == 1))
        d_b = np.sum((times_b == t) & (events_b == 1))
        d = d_a + d_b
        if n == 0 or d == 0:
            continue
        observed_a += d_a
        expected_a += d * n_a / n
        if n > 1:
            variance += d * (n_a / n) * (n_b / n) * (n - d) / (n - 1)
    if variance == 0:
        return 0.0, 1.0
    stat = (observed_a - expected_a) ** 2 / variance
    return float(stat), _chi2_sf_1df(stat)


def c_index(risks, times, events):
    """Harrell's concordance index by pair enumeration; risk ties count 1/2."""
    risks = np.asarray(risks, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=np.int64)
    n = len(risks)
    if n < 2:
        raise ValueError("need at least 2 subjects")
    concordant = 0.0
    comparable = 0
    for i in range(n):
        if not events[i]:
            continue
        for j in range(n):
            if i == j:
                continue
            if times[i] < times[j]:
                comparable += 1
                if risks[i] > risks[j]:
                    concordant += 1.0
                elif risks[i] == risks[j]:
                    concordant += 0.5
    if comparable == 0:
        raise ValueError("no comparable pairs")
    return concordant / comparable
