"""Epoch containers, band-pass preprocessing, the synthetic AR-process
generator used for desk-scale verification, and the on-disk epoch format.

The container format is a single UTF-8 JSON manifest line followed by the
raw little-endian float64 payload, epoch-major row-major, sessions
concatenated in manifest order. It round-trips bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.signal

from .covariance import Epoch
from .errors import (
    FormatError,
    InvalidBand,
    InvalidEpoch,
    UnstableSpec,
    VersionUnsupported,
)

FORMAT_NAME = "acm-epochs"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Session:
    """One recording session: epochs plus integer class labels."""

    session_id: str
    epochs: list
    labels: list

    def __post_init__(self):
        if len(self.epochs) != len(self.labels):
            raise InvalidEpoch(
                f"session {self.session_id!r}: {len(self.epochs)} epochs but "
                f"{len(self.labels)} labels"
            )
        object.__setattr__(self, "labels", [int(v) for v in self.labels])


@dataclass(frozen=True)
class EpochSet:
    """Labeled epochs for one subject, grouped by session."""

    subject: str
    sessions: list
    class_names: list
    sample_rate: float = field(init=False)

    def __post_init__(self):
        if not self.sessions:
            raise InvalidEpoch("EpochSet needs at least one session")
        shapes = {e.data.shape for s in self.sessions for e in s.epochs}
        rates = {e.sample_rate for s in self.sessions for e in s.epochs}
        if len(shapes) != 1 or len(rates) != 1:
            raise InvalidEpoch(
                f"all epochs must share shape and sample rate, got shapes "
                f"{sorted(shapes)} and rates {sorted(rates)}"
            )
        n_classes = len(self.class_names)
        for s in self.sessions:
            bad = [v for v in s.labels if not 0 <= v < n_classes]
            if bad:
                raise InvalidEpoch(f"session {s.session_id!r} has labels {bad} outside "
                                   f"[0, {n_classes})")
        object.__setattr__(self, "sample_rate", rates.pop())

    @property
    def n_channels(self) -> int:
        return self.sessions[0].epochs[0].n_channels

    @property
    def n_samples(self) -> int:
        return self.sessions[0].epochs[0].n_samples

    def all_epochs(self) -> tuple[list, np.ndarray]:
        """Flatten every session into (epochs, labels)."""
        epochs = [e for s in self.sessions for e in s.epochs]
        labels = np.array([v for s in self.sessions for v in s.labels], dtype=int)
        return epochs, labels


# -- band-pass preprocessing -------------------------------------------

def bandpass(epoch: Epoch, low_hz: float, high_hz: float) -> Epoch:
    """Zero-phase 4th-order Butterworth band-pass, per channel.

    Applied forward and backward (squared magnitude response, zero phase)
    with Gustafsson edge handling, which makes the forward-backward pass
    exactly direction-independent: a symmetric pulse stays symmetric. The
    per-channel residual mean is then removed outright; a constant sits at
    0 Hz, squarely in the stopband, so this only sharpens the ideal
    response. T is preserved.
    """
    nyquist = epoch.sample_rate / 2.0
    if not 0.0 < low_hz < high_hz < nyquist:
        raise InvalidBand(
            f"need 0 < low < high < {nyquist} Hz, got [{low_hz}, {high_hz}]"
        )
    b, a = scipy.signal.butter(
        4, [low_hz, high_hz], btype="bandpass", fs=epoch.sample_rate
    )
    out = scipy.signal.filtfilt(b, a, epoch.data, axis=1, method="gust")
    out -= out.mean(axis=1, keepdims=True)
    return Epoch(out, epoch.sample_rate)


# -- synthetic AR generator --------------------------------------------

@dataclass(frozen=True)
class ArSpec:
    """Generator description: per-class AR coefficients and innovation
    covariances, the generator lag, epoch geometry and the seed.

    coefficients[c] is the list [A_1, ..., A_p] for class c; innovation[c]
    the SPD innovation covariance U for class c. Every class must define a
    stable process (companion spectral radius < 1).
    """

    coefficients: list
    innovations: list
    lag: int
    n_samples: int
    epochs_per_class: int
    seed: int
    sample_rate: float = 250.0
    n_sessions: int = 1
    subject: str = "sim"

    def __post_init__(self):
        if len(self.coefficients) != len(self.innovations):
            raise UnstableSpec("one innovation covariance per class required")
        if not self.coefficients:
            raise UnstableSpec("at least one class required")
        if self.lag < 1 or self.n_samples < 2 or self.epochs_per_class < 1:
            raise UnstableSpec("lag >= 1, n_samples >= 2 and epochs_per_class >= 1 required")
        coeffs = [[np.asarray(a, dtype=float) for a in cls] for cls in self.coefficients]
        innov = [np.asarray(u, dtype=float) for u in self.innovations]
        object.__setattr__(self, "coefficients", coeffs)
        object.__setattr__(self, "innovations", innov)
        for c, cls in enumerate(coeffs):
            rho = companion_spectral_radius(cls, self.lag)
            if rho >= 1.0:
                raise UnstableSpec(
                    f"class {c} AR process is unstable: spectral radius {rho:.4f} >= 1"
                )
            w = np.linalg.eigvalsh(innov[c])
            if w[0] <= 0:
                raise UnstableSpec(f"class {c} innovation covariance is not SPD")

    @property
    def n_classes(self) -> int:
        return len(self.coefficients)

    @property
    def n_channels(self) -> int:
        return self.innovations[0].shape[0]


def companion_spectral_radius(coefficients: list, lag: int) -> float:
    """Spectral radius of the companion matrix of X_t = sum A_i X_{t-i*lag}.

    The lagged process is a VAR(p*lag) with zero blocks at non-multiples of
    lag; an empty coefficient list (white noise) has radius 0.
    """
    if not coefficients:
        return 0.0
    d = coefficients[0].shape[0]
    span = len(coefficients) * lag
    comp = np.zeros((d * span, d * span))
    for i, a in enumerate(coefficients):
        k = (i + 1) * lag
        comp[:d, (k - 1) * d:k * d] = a
    if span > 1:
        comp[d:, :-d] = np.eye(d * (span - 1))
    return float(np.max(np.abs(np.linalg.eigvals(comp))))


def _simulate_epoch(spec: ArSpec, class_idx: int, rng: np.random.Generator) -> np.ndarray:
    coeffs = spec.coefficients[class_idx]
    chol = np.linalg.cholesky(spec.innovations[class_idx])
    d = spec.n_channels
    p = len(coeffs)
    burn_in = 10 * p * spec.lag
    total = spec.n_samples + burn_in
    x = np.zeros((d, total))
    noise = chol @ rng.standard_normal((d, total))
    for t in range(total):
        acc = noise[:, t].copy()
        for i, a in enumerate(coeffs):
            back = (i + 1) * spec.lag
            if t - back >= 0:
                acc += a @ x[:, t - back]
        x[:, t] = acc
    return x[:, burn_in:]


def generate_ar_dataset(spec: ArSpec) -> EpochSet:
    """Draw a labeled EpochSet from per-class AR processes.

    Each epoch is simulated from zero initial history with a burn-in of
    10 * order * lag samples discarded. Epoch substreams are derived from
    (seed, session, class, epoch) counters, so output is identical however
    the work is distributed.
    """
    sessions = []
    for s_idx in range(spec.n_sessions):
        epochs, labels = [], []
        for c_idx in range(spec.n_classes):
            for e_idx in range(spec.epochs_per_class):
                ss = np.random.SeedSequence(
                    entropy=spec.seed, spawn_key=(s_idx, c_idx, e_idx)
                )
                rng = np.random.Generator(np.random.PCG64(ss))
                data = _simulate_epoch(spec, c_idx, rng)
                epochs.append(Epoch(data, spec.sample_rate))
                labels.append(c_idx)
        sessions.append(Session(f"session{s_idx}", epochs, labels))
    class_names = [f"class{c}" for c in range(spec.n_classes)]
    return EpochSet(spec.subject, sessions, class_names)


def ar_spec_from_dict(raw: dict) -> ArSpec:
    """Build an ArSpec from parsed JSON (the CLI's inline/file input)."""
    try:
        return ArSpec(
            coefficients=raw["coefficients"],
            innovations=raw["innovations"],
            lag=int(raw.get("lag", 1)),
            n_samples=int(raw["n_samples"]),
            epochs_per_class=int(raw["epochs_per_class"]),
            seed=int(raw["seed"]),
            sample_rate=float(raw.get("sample_rate", 250.0)),
            n_sessions=int(raw.get("n_sessions", 1)),
            subject=str(raw.get("subject", "sim")),
        )
    except KeyError as exc:
        raise UnstableSpec(f"generator spec is missing field {exc}") from exc


# -- container format --------------------------------------------------

def write_epochset(epoch_set: EpochSet, path) -> None:
    """Write the single-line JSON manifest plus raw float64 payload."""
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "subject": epoch_set.subject,
        "classes": list(epoch_set.class_names),
        "sample_rate": epoch_set.sample_rate,
        "sessions": [
            {"id": s.session_id, "n_epochs": len(s.epochs), "labels": list(s.labels)}
            for s in epoch_set.sessions
        ],
        "d": epoch_set.n_channels,
        "T": epoch_set.n_samples,
        "dtype": "f64le",
        "order": "epoch-major row-major",
    }
    header = json.dumps(manifest, separators=(",", ":")) + "\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8"))
        for session in epoch_set.sessions:
            for epoch in session.epochs:
                fh.write(np.ascontiguousarray(epoch.data, dtype="<f8").tobytes())


def read_epochset(path) -> EpochSet:
    """Read a container written by write_epochset; lossless inverse."""
    with open(path, "rb") as fh:
        header = fh.readline()
        payload = fh.read()
    if not header.endswith(b"\n"):
        raise FormatError("missing newline-terminated manifest line", offset=len(header))
    try:
        manifest = json.loads(header.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}", offset=0) from exc

    if manifest.get("format") != FORMAT_NAME:
        raise FormatError(f"not an {FORMAT_NAME} container", offset=0)
    if manifest.get("version") != FORMAT_VERSION:
        raise VersionUnsupported(
            f"container version {manifest.get('version')!r} unsupported, "
            f"expected {FORMAT_VERSION}"
        )
    for key in ("subject", "classes", "sample_rate", "sessions", "d", "T"):
        if key not in manifest:
            raise FormatError(f"manifest is missing the {key!r} section", offset=0)

    d, t = int(manifest["d"]), int(manifest["T"])
    total_epochs = sum(int(s["n_epochs"]) for s in manifest["sessions"])
    expected_bytes = total_epochs * d * t * 8
    if len(payload) != expected_bytes:
        raise FormatError(
            f"payload holds {len(payload)} bytes but the manifest declares "
            f"{total_epochs} epochs of {d}x{t} float64 ({expected_bytes} bytes); "
            f"payload section truncated or inconsistent",
            offset=len(header) + min(len(payload), expected_bytes),
        )
    flat = np.frombuffer(payload, dtype="<f8")

    sessions = []
    cursor = 0
    rate = float(manifest["sample_rate"])
    for s in manifest["sessions"]:
        n = int(s["n_epochs"])
        labels = [int(v) for v in s["labels"]]
        if len(labels) != n:
            raise FormatError(
                f"session {s['id']!r} declares {n} epochs but {len(labels)} labels",
                offset=0,
            )
        epochs = []
        for _ in range(n):
            block = flat[cursor:cursor + d * t].reshape(d, t)
            epochs.append(Epoch(block, rate))
            cursor += d * t
        sessions.append(Session(str(s["id"]), epochs, labels))
    return EpochSet(str(manifest["subject"]), sessions, [str(c) for c in manifest["classes"]])


def epoch_to_csv(epoch: Epoch, path) -> None:
    """Dump one epoch for inspection: channel rows, sample columns."""
    np.savetxt(path, epoch.data, delimiter=",")
