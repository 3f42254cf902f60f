"""Measurement pipeline: log files, zero-phase filtering, differentiation.

Logs hold uniformly sampled motor positions, velocities, and torques.  The
processing chain low-pass filters every channel forward and backward (no
phase lag), derives accelerations from the filtered velocities, and drops
the start-up ramp, leaving data ready for regression stacking.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.signal

__all__ = [
    "JointLog",
    "ProcessedLog",
    "butterworth_zero_phase",
    "differentiate",
    "process_log",
    "read_log",
    "write_log",
]


@dataclass(frozen=True)
class JointLog:
    """Uniformly sampled motor-side measurements."""

    t: np.ndarray
    q_m: np.ndarray
    dq_m: np.ndarray
    tau_m: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        q = np.asarray(self.q_m, dtype=float)
        dq = np.asarray(self.dq_m, dtype=float)
        tau = np.asarray(self.tau_m, dtype=float)
        if t.ndim != 1 or q.ndim != 2:
            raise ValueError("t must be 1-D and channel arrays 2-D")
        if not (len(t) == len(q) == len(dq) == len(tau)):
            raise ValueError("all log arrays must have equal length")
        if q.shape != dq.shape or q.shape != tau.shape:
            raise ValueError("q, dq, tau must share one shape")
        if len(t) < 2:
            raise ValueError("log needs at least two samples")
        dt = np.diff(t)
        if dt.min() <= 0.0:
            raise ValueError("timestamps must be strictly increasing")
        step = float(np.median(dt))
        if np.abs(dt - step).max() > 1e-6 * step:
            raise ValueError("sampling jitter exceeds 1e-6 of the period")
        for name, arr in (("t", t), ("q_m", q), ("dq_m", dq), ("tau_m", tau)):
            object.__setattr__(self, name, arr)

    @property
    def fs(self) -> float:
        """Sample rate in Hz."""
        return 1.0 / float(np.median(np.diff(self.t)))

    @property
    def motor_count(self) -> int:
        return self.q_m.shape[1]


@dataclass(frozen=True)
class ProcessedLog(JointLog):
    """A filtered, differentiated, ramp-trimmed log."""

    ddq_m: np.ndarray = None  # set in __post_init__ path below

    def __post_init__(self):
        super().__post_init__()
        ddq = np.asarray(self.ddq_m, dtype=float)
        if ddq.shape != self.q_m.shape:
            raise ValueError("ddq_m must match the other channel arrays")
        object.__setattr__(self, "ddq_m", ddq)


def butterworth_zero_phase(signal, fs: float, cutoff: float, order: int = 6):
    """Forward-backward Butterworth low-pass with odd-reflection padding.

    The two passes square the magnitude response and cancel the phase, so
    passband content keeps its timing.  Requires 0 < cutoff < fs/2 and a
    signal longer than the 3*(order+1) reflection pad.
    """
    x = np.asarray(signal, dtype=float)
    if not 0.0 < cutoff < 0.5 * fs:
        raise ValueError(f"cutoff {cutoff} Hz outside (0, {fs / 2}) Hz")
    padlen = 3 * (order + 1)
    if x.shape[0] <= padlen:
        raise ValueError(f"signal length {x.shape[0]} too short for order {order}")
    sos = scipy.signal.butter(order, cutoff, fs=fs, output="sos")
    return scipy.signal.sosfiltfilt(sos, x, axis=0, padtype="odd", padlen=padlen)


def differentiate(signal, fs: float):
    """Second-order finite-difference derivative along axis 0.

    Central differences inside, one-sided three-point stencils at the edges;
    exact for polynomials up to degree two.
    """
    x = np.asarray(signal, dtype=float)
    if x.shape[0] < 3:
        raise ValueError("need at least three samples to differentiate")
    return np.gradient(x, 1.0 / fs, axis=0, edge_order=2)


def process_log(log: JointLog, cutoff: float | None, order: int = 6,
                ramp_duration: float = 5.0) -> ProcessedLog:
    """Filter, differentiate, and trim a raw log.

    ``cutoff=None`` skips filtering entirely (useful on noiseless synthetic
    data where filtering would distort discontinuous friction content).
    Acceleration always comes from the (possibly filtered) velocity channel:
    differentiate, then filter again.  The first ``ramp_duration`` seconds
    are dropped so ramp-in transients never reach the estimator.
    """
    fs = log.fs
    if cutoff is None:
        q, dq, tau = log.q_m, log.dq_m, log.tau_m
        ddq = differentiate(dq, fs)
    else:
        q = butterworth_zero_phase(log.q_m, fs, cutoff, order)
        dq = butterworth_zero_phase(log.dq_m, fs, cutoff, order)
        tau = butterworth_zero_phase(log.tau_m, fs, cutoff, order)
        ddq = butterworth_zero_phase(differentiate(dq, fs), fs, cutoff, order)
    keep = log.t >= log.t[0] + ramp_duration
    if not np.any(keep):
        raise ValueError(f"log shorter than the {ramp_duration} s ramp")
    return ProcessedLog(t=log.t[keep], q_m=q[keep], dq_m=dq[keep],
                        tau_m=tau[keep], ddq_m=ddq[keep])


# -- file format --------------------------------------------------------------
#
# CSV, UTF-8, '\n' newlines, header t,q1..qn,dq1..dqn,tau1..taun.  Floats are
# written with repr so a read-write round trip is bit exact.


def write_log(log: JointLog, path) -> None:
    n = log.motor_count
    header = (["t"]
              + [f"q{i}" for i in range(1, n + 1)]
              + [f"dq{i}" for i in range(1, n + 1)]
              + [f"tau{i}" for i in range(1, n + 1)])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(log.t)):
            row = [repr(float(log.t[i]))]
            row += [repr(float(v)) for v in log.q_m[i]]
            row += [repr(float(v)) for v in log.dq_m[i]]
            row += [repr(float(v)) for v in log.tau_m[i]]
            writer.writerow(row)


def read_log(path) -> JointLog:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "t" or (len(header) - 1) % 3 != 0:
            raise ValueError(f"{path}: not a joint log (bad header)")
        n = (len(header) - 1) // 3
        expect = (["t"]
                  + [f"q{i}" for i in range(1, n + 1)]
                  + [f"dq{i}" for i in range(1, n + 1)]
                  + [f"tau{i}" for i in range(1, n + 1)])
        if header != expect:
            raise ValueError(f"{path}: unexpected column order")
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.asarray(rows, dtype=float)
    if data.ndim != 2 or data.shape[1] != 1 + 3 * n:
        raise ValueError(f"{path}: ragged or empty data section")
    return JointLog(t=data[:, 0], q_m=data[:, 1:1 + n],
                    dq_m=data[:, 1 + n:1 + 2 * n], tau_m=data[:, 1 + 2 * n:])
