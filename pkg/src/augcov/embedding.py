"""Nonlinear-dynamics estimators for the stacking hyper-parameters: average
mutual information for the delay, Cao's neighbor-ratio method for the
dimension, and the unified MDOP procedure choosing both jointly.

Everything here is deterministic: no randomness, fixed reduction order, and
per-channel curves are accumulated over all channels and epochs before any
extremum is taken.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConstantSeries, LagTooLarge, TooShort

AMI_DEFAULT_BINS = 16
CAO_DEFAULT_THRESHOLD = 0.05
MDOP_DEFAULT_MAX_LAG = 10
FNN_RATIO = 10.0  # Kennel false-neighbor distance ratio


@dataclass(frozen=True)
class EmbeddingEstimate:
    """Chosen (tau, dim) plus the diagnostic curves behind the choice."""

    tau: int
    dim: int
    method: str
    ami_curve: np.ndarray | None = None
    e1_curve: np.ndarray | None = None
    cycle_lags: tuple = ()
    flags: tuple = ()


@dataclass(frozen=True)
class TauSelection:
    tau: int
    curve: np.ndarray
    no_local_minimum: bool


@dataclass(frozen=True)
class CaoResult:
    dim: int
    e1_curve: np.ndarray
    saturation_failure: bool


def average_mutual_information(
    series: np.ndarray, max_lag: int, bins: int = AMI_DEFAULT_BINS
) -> np.ndarray:
    """Mutual information (nats) between a series and its lagged copy, for
    lags 1..max_lag, from a bins x bins equal-width joint histogram over the
    series range.
    """
    series = np.asarray(series, dtype=float).ravel()
    n = series.size
    if n <= max_lag + 10:
        raise TooShort(f"series of length {n} too short for max_lag {max_lag}")
    lo, hi = float(series.min()), float(series.max())
    if hi <= lo:
        raise ConstantSeries("cannot bin a constant series")
    edges = np.linspace(lo, hi, bins + 1)

    curve = np.empty(max_lag)
    for lag in range(1, max_lag + 1):
        joint, _, _ = np.histogram2d(series[:-lag], series[lag:], bins=(edges, edges))
        joint /= joint.sum()
        px = joint.sum(axis=1)
        py = joint.sum(axis=0)
        nz = joint > 0
        ratio = joint[nz] / (px[:, None] * py[None, :])[nz]
        curve[lag - 1] = np.sum(joint[nz] * np.log(ratio))
    # histogram quantization can leave -1e-17 style residue
    return np.maximum(curve, 0.0)


def _iter_series(epoch_set):
    for session in epoch_set.sessions:
        for epoch in session.epochs:
            for channel in epoch.data:
                yield channel


def select_tau_ami(
    epoch_set, max_lag: int, bins: int = AMI_DEFAULT_BINS
) -> TauSelection:
    """Accumulate AMI curves over every channel of every epoch and return the
    lag of the first strict local minimum of the aggregate.

    When no interior local minimum exists in range the argmin is returned
    with no_local_minimum set.
    """
    aggregate = np.zeros(max_lag)
    for channel in _iter_series(epoch_set):
        aggregate += average_mutual_information(channel, max_lag, bins)
    for i in range(1, max_lag - 1):
        if aggregate[i] < aggregate[i - 1] and aggregate[i] < aggregate[i + 1]:
            return TauSelection(i + 1, aggregate, False)
    return TauSelection(int(np.argmin(aggregate)) + 1, aggregate, True)


def _delay_matrix(series: np.ndarray, dim: int, tau: int, count: int) -> np.ndarray:
    """First `count` delay vectors [s(i), s(i+tau), ..., s(i+(dim-1)tau)]."""
    return np.stack([series[k * tau:k * tau + count] for k in range(dim)], axis=1)


def _chebyshev_nn(points: np.ndarray, block: int = 256):
    """Nearest strictly-distinct neighbor of each row under the max metric.

    Distances below float-level resolution of the data scale are treated as
    duplicates (a periodic signal sampled at an integer period revisits the
    same state up to rounding). Returns (indices, distances); index -1 marks
    rows with no distinct neighbor at all. Computed in row blocks so memory
    stays O(block * n); ties resolve to the lowest index.
    """
    n, m = points.shape
    scale = float(np.ptp(points)) or 1.0
    tol = 1e-9 * scale
    idx = np.full(n, -1, dtype=int)
    best = np.full(n, np.inf)
    for start in range(0, n, block):
        stop = min(start + block, n)
        dists = np.abs(points[start:stop, None, 0] - points[None, :, 0])
        for c in range(1, m):
            np.maximum(dists, np.abs(points[start:stop, None, c] - points[None, :, c]),
                       out=dists)
        rows = np.arange(start, stop)
        dists[rows - start, rows] = np.inf
        dists[dists <= tol] = np.inf
        local = np.argmin(dists, axis=1)
        idx[rows] = local
        best[rows] = dists[rows - start, local]
    idx[~np.isfinite(best)] = -1
    return idx, best


def _cao_e_curve(series: np.ndarray, tau: int, max_e_dim: int) -> np.ndarray:
    """Cao's E(m) for m = 1..max_e_dim on one series."""
    n = series.size
    out = np.full(max_e_dim, np.nan)
    for m in range(1, max_e_dim + 1):
        count = n - m * tau  # indices where both the m and m+1 vectors exist
        if count < 2:
            raise TooShort(
                f"series of length {n} cannot support dimension {m + 1} at lag {tau}"
            )
        y_m = _delay_matrix(series, m, tau, count)
        y_m1 = _delay_matrix(series, m + 1, tau, count)
        nn_idx, nn_dist = _chebyshev_nn(y_m)
        valid = nn_idx >= 0
        if not np.any(valid):
            continue
        i = np.nonzero(valid)[0]
        j = nn_idx[i]
        d_up = np.max(np.abs(y_m1[i] - y_m1[j]), axis=1)
        out[m - 1] = np.mean(d_up / nn_dist[i])
    return out


def cao_embedding_dimension(
    epoch_set,
    tau: int,
    max_dim: int,
    threshold: float = CAO_DEFAULT_THRESHOLD,
) -> CaoResult:
    """Embedding dimension by Cao's neighbor-distance-ratio statistic.

    E1(m) = E(m+1)/E(m) is averaged over all channels and epochs; the result
    is the smallest D with both |E1(D) - 1| and |E1(D+1) - 1| below the
    threshold, or max_dim with saturation_failure set when the curve never
    settles.
    """
    if max_dim < 2:
        raise ValueError(f"max_dim must be >= 2, got {max_dim}")
    max_e_dim = max_dim + 1
    total = np.zeros(max_e_dim)
    count = 0
    for channel in _iter_series(epoch_set):
        e_curve = _cao_e_curve(channel, tau, max_e_dim)
        if np.any(np.isnan(e_curve)) or np.any(e_curve == 0.0):
            continue
        total += e_curve
        count += 1
    if count == 0:
        raise TooShort("no channel produced a usable E curve")
    e_mean = total / count
    e1 = e_mean[1:] / e_mean[:-1]  # E1(m) for m = 1..max_dim
    settled = np.abs(e1 - 1.0) < threshold
    for d in range(1, max_dim):
        if settled[d - 1] and settled[d]:
            return CaoResult(d, e1, False)
    return CaoResult(max_dim, e1, True)


def _mdop_cycle_stats(series, delays, candidates):
    """One series' contribution to the beta statistic of each candidate lag.

    Returns (log_phi_sums, log_phi_counts, fnn_false, fnn_total), each
    indexed like candidates; fnn_* count Kennel-ratio violations so the
    caller can evaluate termination for whichever lag wins.
    """
    n = series.size
    horizon = max(max(delays), max(candidates))
    t = np.arange(horizon, n)
    if t.size < 2:
        raise TooShort(f"series of length {n} too short for delay horizon {horizon}")
    current = np.stack([series[t - d] for d in delays], axis=1)
    nn_idx, nn_dist = _chebyshev_nn(current)
    valid = nn_idx >= 0
    i = np.nonzero(valid)[0]
    j = nn_idx[i]
    dist = nn_dist[i]

    k = len(candidates)
    sums = np.zeros(k)
    counts = np.zeros(k, dtype=int)
    false_counts = np.zeros(k, dtype=int)
    for c, lag in enumerate(candidates):
        new_i = series[t[i] - lag]
        new_j = series[t[j] - lag]
        phi = np.abs(new_i - new_j) / dist
        pos = phi > 0.0
        sums[c] = np.sum(np.log(phi[pos]))
        counts[c] = int(np.sum(pos))
        false_counts[c] = int(np.sum(phi > FNN_RATIO))
    return sums, counts, false_counts, i.size


def mdop_unified(
    epoch_set,
    max_cycles: int = 8,
    fnn_threshold: float = 0.05,
    max_lag: int = MDOP_DEFAULT_MAX_LAG,
) -> EmbeddingEstimate:
    """Joint (tau, dim) estimate by iterative embedding.

    Starting from the bare series, each cycle picks the delayed coordinate
    whose directional-derivative beta statistic (pooled geometric mean of
    nearest-neighbor coordinate ratios over all channels and epochs) is
    largest, and uses it to probe the current embedding with the Kennel
    false-neighbor fraction: when even the most informative candidate
    separates fewer than fnn_threshold of the current neighbor pairs, the
    embedding is complete and the candidate is not added. Otherwise the
    coordinate joins the embedding and the cycle repeats, up to max_cycles
    additions (then flagged "no_termination").

    dim is the final coordinate count (base coordinate included); tau is the
    half-up-rounded mean of the added lags.
    """
    delays = [0]
    chosen = []
    flags = []
    for _ in range(max_cycles):
        candidates = [lag for lag in range(1, max_lag + 1) if lag not in delays]
        if not candidates:
            flags.append("no_termination")
            break
        sums = np.zeros(len(candidates))
        counts = np.zeros(len(candidates), dtype=int)
        false_counts = np.zeros(len(candidates), dtype=int)
        totals = 0
        for channel in _iter_series(epoch_set):
            s, c, f, tot = _mdop_cycle_stats(channel, delays, candidates)
            sums += s
            counts += c
            false_counts += f
            totals += tot
        if totals == 0:
            raise TooShort("no usable neighbor pairs for the beta statistic")
        beta = np.where(counts > 0, sums / np.maximum(counts, 1), -np.inf)
        best = int(np.argmax(beta))
        if chosen and false_counts[best] / totals < fnn_threshold:
            break
        chosen.append(candidates[best])
        delays.append(candidates[best])
    else:
        flags.append("no_termination")

    tau = max(1, int(np.floor(np.mean(chosen) + 0.5)))
    est = EmbeddingEstimate(
        tau=tau,
        dim=1 + len(chosen),
        method="mdop",
        cycle_lags=tuple(chosen),
        flags=tuple(flags),
    )
    _check_fits(est, epoch_set.n_samples)
    return est


def estimate_traditional(
    epoch_set,
    max_lag: int = MDOP_DEFAULT_MAX_LAG,
    bins: int = AMI_DEFAULT_BINS,
    max_dim: int = 8,
    threshold: float = CAO_DEFAULT_THRESHOLD,
) -> EmbeddingEstimate:
    """AMI delay followed by Cao dimension (the two-step route)."""
    tau_sel = select_tau_ami(epoch_set, max_lag, bins)
    cao = cao_embedding_dimension(epoch_set, tau_sel.tau, max_dim, threshold)
    flags = []
    if tau_sel.no_local_minimum:
        flags.append("no_local_minimum")
    if cao.saturation_failure:
        flags.append("saturation_failure")
    est = EmbeddingEstimate(
        tau=tau_sel.tau,
        dim=cao.dim,
        method="ami_cao",
        ami_curve=tau_sel.curve,
        e1_curve=cao.e1_curve,
        flags=tuple(flags),
    )
    _check_fits(est, epoch_set.n_samples)
    return est


def _check_fits(est: EmbeddingEstimate, n_samples: int) -> None:
    if (est.dim - 1) * est.tau >= n_samples:
        raise LagTooLarge(
            f"estimated (dim={est.dim}, tau={est.tau}) needs "
            f"(dim-1)*tau < T = {n_samples}; epochs are too short for the "
            f"estimated embedding"
        )


def curve_to_csv(curve: np.ndarray, path, start: int = 1) -> None:
    """Write a diagnostic curve as lag,value rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lag", "value"])
        for i, v in enumerate(curve, start=start):
            writer.writerow([i, repr(float(v))])
