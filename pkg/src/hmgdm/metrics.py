"""Evaluation metrics: classification, regression, and survival analysis.

All survival routines take parallel arrays (risks, times, events) where
event 1 means the terminal event was observed and 0 means censored.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2


@dataclass
class KMCurve:
    times: np.ndarray  # distinct event times, ascending
    survival: np.ndarray  # S(t) immediately after each event time
    n_at_risk: np.ndarray
    n_events: np.ndarray


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.size == 0:
        raise ValueError("invalid input: need equal-length non-empty arrays")
    return float(np.mean(preds == labels))


def macro_f1(preds, labels, n_classes: int) -> float:
    """Unweighted mean of per-class F1; 0/0 ratios count as 0."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.size == 0 or preds.shape != labels.shape:
        raise ValueError("invalid input: need equal-length non-empty arrays")
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise ValueError("invalid input: label outside [0, n_classes)")
    f1s = []
    for c in range(n_classes):
        tp = int(np.sum((preds == c) & (labels == c)))
        fp = int(np.sum((preds == c) & (labels != c)))
        fn = int(np.sum((preds != c) & (labels == c)))
        prec = tp / (tp + fp) if tp + fp > 0 else 0.0
        rec = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0)
    return float(np.mean(f1s))


def rmse(pred, true) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape:
        raise ValueError("shape mismatch")
    return float(np.sqrt(np.mean((pred - true) ** 2)))


def concordance_index(risks, times, events) -> float:
    """Harrell's C by exact pair enumeration.

    A pair (i, j) is comparable when subject j had an event strictly before
    time t_i. Concordant pairs have the higher risk on the earlier subject;
    risk ties score 0.5.
    """
    risks = np.asarray(risks, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=np.int64)
    n = len(risks)
    num = 0.0
    den = 0
    for i in range(n):
        for j in range(n):
            if times[j] < times[i] and events[j] == 1:
                den += 1
                if risks[j] > risks[i]:
                    num += 1.0
                elif risks[j] == risks[i]:
                    num += 0.5
    if den == 0:
        raise ValueError("undefined metric: no comparable pairs")
    return float(num / den)


def km_estimator(times, events) -> KMCurve:
    """Product-limit survival estimate over distinct event times."""
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=np.int64)
    if len(times) == 0:
        raise ValueError("invalid input: empty cohort")
    event_times = np.unique(times[events == 1])
    surv = 1.0
    survival, at_risk, n_events = [], [], []
    for t in event_times:
        n_i = int(np.sum(times >= t))
        d_i = int(np.sum((times == t) & (events == 1)))
        surv *= 1.0 - d_i / n_i
        survival.append(surv)
        at_risk.append(n_i)
        n_events.append(d_i)
    return KMCurve(
        times=event_times,
        survival=np.array(survival, dtype=np.float64),
        n_at_risk=np.array(at_risk, dtype=np.int64),
        n_events=np.array(n_events, dtype=np.int64),
    )


def logrank_test(times_a, events_a, times_b, events_b) -> tuple[float, float]:
    """Two-group log-rank test; returns (chi-square statistic, p-value)."""
    times_a = np.asarray(times_a, dtype=np.float64)
    events_a = np.asarray(events_a, dtype=np.int64)
    times_b = np.asarray(times_b, dtype=np.float64)
    events_b = np.asarray(events_b, dtype=np.int64)
    if len(times_a) == 0 or len(times_b) == 0:
        raise ValueError("invalid input: both groups must be non-empty")
    all_times = np.concatenate([times_a, times_b])
    all_events = np.concatenate([events_a, events_b])
    event_times = np.unique(all_times[all_events == 1])
    if len(event_times) == 0:
        raise ValueError("undefined test: no events in either group")
    obs_minus_exp = 0.0
    variance = 0.0
    for t in event_times:
        n_a = int(np.sum(times_a >= t))
        n_b = int(np.sum(times_b >= t))
        d_a = int(np.sum((times_a == t) & (events_a == 1)))
        d_b = int(np.sum((times_b == t) & (events_b == 1)))
        n_i = n_a + n_b
        d_i = d_a + d_b
        if n_i < 1:
            continue
        expected_a = d_i * n_a / n_i
        obs_minus_exp += d_a - expected_a
        if n_i > 1:
            variance += d_i * (n_a / n_i) * (n_b / n_i) * (n_i - d_i) / (n_i - 1)
    if variance == 0.0:
        return 0.0, 1.0
    stat = obs_minus_exp * obs_minus_exp / variance
    return float(stat), float(chi2.sf(stat, df=1))


def median_risk_split(risks) -> tuple[np.ndarray, np.ndarray]:
    """Indices of (high-risk, low-risk) groups split at the median risk.

    Strictly above the median goes high; ties at the median go low.
    """
    risks = np.asarray(risks, dtype=np.float64)
    if len(risks) < 2:
        raise ValueError("invalid input: need at least 2 subjects")
    threshold = float(np.median(risks))
    idx = np.arange(len(risks))
    high = idx[risks > threshold]
    low = idx[risks <= threshold]
    return high, low
