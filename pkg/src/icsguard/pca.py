"""Zone-based PCA monitor: standardization, cyclic-Jacobi eigendecomposition,
top-d projections and Hotelling T2 / SPE alarm statistics."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .plant import CHANNELS, CHANNEL_INDEX, TelemetryFrame

STD_EPS = 1e-9
THRESHOLD_PERCENTILE = 99.5


class EigenError(RuntimeError):
    pass


def jacobi_eigen(S: np.ndarray, tol_factor: float = 1e-12,
                 max_sweeps: int = 100):
    """Eigendecompose a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues descending, eigenvectors as columns, matched order).
    """
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    if S.shape != (n, n) or n > 64:
        raise EigenError(f"expected square matrix with n <= 64, got {S.shape}")
    if not np.allclose(S, S.T, atol=1e-10):
        raise EigenError("matrix is not symmetric within 1e-10")

    A = 0.5 * (S + S.T)
    V = np.eye(n)
    fro = np.linalg.norm(A, "fro")
    tol = tol_factor * max(fro, 1.0e-300)
    for sweep in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(A, -1) ** 2) * 2.0)
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) < tol / max(n, 1):
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                J_p = A[:, p].copy()
                J_q = A[:, q].copy()
                A[:, p] = c * J_p - s * J_q
                A[:, q] = s * J_p + c * J_q
                R_p = A[p, :].copy()
                R_q = A[q, :].copy()
                A[p, :] = c * R_p - s * R_q
                A[q, :] = s * R_p + c * R_q
                V_p = V[:, p].copy()
                V_q = V[:, q].copy()
                V[:, p] = c * V_p - s * V_q
                V[:, q] = s * V_p + c * V_q
    else:
        off = np.sqrt(np.sum(np.tril(A, -1) ** 2) * 2.0)
        if off >= tol:
            raise EigenError(f"no convergence after {max_sweeps} sweeps, "
                             f"off-diagonal residual {off:.3e}")
    eigvals = np.diag(A).copy()
    order = np.argsort(-eigvals, kind="stable")
    return eigvals[order], V[:, order]


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray                 # population std, floored at STD_EPS
    constant: np.ndarray            # bool mask of near-constant channels

    @classmethod
    def fit(cls, data: np.ndarray) -> "Standardizer":
        data = np.asarray(data, dtype=float)
        mean = data.mean(axis=0)
        std = data.std(axis=0)
        constant = std < STD_EPS
        if constant.any():
            warnings.warn(f"constant channels at indices {np.where(constant)[0]}")
        std = np.where(constant, STD_EPS, std)
        return cls(mean=mean, std=std, constant=constant)

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=float) - self.mean) / self.std

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z) * self.std + self.mean


@dataclass(frozen=True)
class PCAModel:
    standardizer: Standardizer
    components: np.ndarray          # (d, k) orthonormal rows
    eigenvalues: np.ndarray         # (d,) descending
    t2_threshold: float
    spe_threshold: float
    channel_order: tuple            # channel names this model consumes

    def __post_init__(self):
        gram = self.components @ self.components.T
        if not np.allclose(gram, np.eye(len(self.eigenvalues)), atol=1e-10):
            raise ValueError("component rows are not orthonormal")
        if np.any(np.diff(self.eigenvalues) > 1e-12) or np.any(self.eigenvalues < -1e-12):
            raise ValueError("eigenvalues must be non-negative, non-increasing")

    def _select(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        idx = [CHANNEL_INDEX[c] for c in self.channel_order]
        return values[..., idx] if values.shape[-1] == len(CHANNELS) else values


def _frame_values(frames) -> np.ndarray:
    if isinstance(frames, np.ndarray):
        return frames
    return np.array([f.values if isinstance(f, TelemetryFrame) else f
                     for f in frames])


def fit_pca(frames, d: int = 3, channels: Optional[Sequence[str]] = None) -> PCAModel:
    """Fit standardizer + top-d principal components on normal telemetry."""
    channels = tuple(channels) if channels is not None else CHANNELS
    data = _frame_values(frames)
    if data.shape[1] == len(CHANNELS) and channels != CHANNELS:
        data = data[:, [CHANNEL_INDEX[c] for c in channels]]
    k = data.shape[1]
    if d > k:
        raise ValueError(f"d={d} exceeds channel count {k}")
    if data.shape[0] < 10 * d:
        raise ValueError(f"need at least {10 * d} frames, got {data.shape[0]}")

    standardizer = Standardizer.fit(data)
    z = standardizer.transform(data)
    cov = (z.T @ z) / z.shape[0]
    eigvals, eigvecs = jacobi_eigen(cov)
    eigvals = np.maximum(eigvals, 0.0)
    components = eigvecs[:, :d].T
    model = PCAModel(standardizer=standardizer, components=components,
                     eigenvalues=eigvals[:d], t2_threshold=1.0,
                     spe_threshold=1.0, channel_order=channels)
    t2s, spes = _batch_statistics(model, z)
    t2_thr = float(np.percentile(t2s, THRESHOLD_PERCENTILE))
    spe_thr = float(np.percentile(spes, THRESHOLD_PERCENTILE))
    return PCAModel(standardizer=standardizer, components=components,
                    eigenvalues=eigvals[:d],
                    t2_threshold=max(t2_thr, 1e-12),
                    spe_threshold=max(spe_thr, 1e-12),
                    channel_order=channels)


def project(model: PCAModel, frame) -> np.ndarray:
    """Top-d projection of one frame; index 0 is the highest-variance axis."""
    values = frame.values if isinstance(frame, TelemetryFrame) else frame
    values = model._select(values)
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite telemetry values")
    return model.components @ model.standardizer.transform(values)


def project_trace(model: PCAModel, frames) -> np.ndarray:
    data = model._select(_frame_values(frames))
    z = model.standardizer.transform(data)
    return z @ model.components.T


def _batch_statistics(model: PCAModel, z: np.ndarray):
    proj = z @ model.components.T
    lam = np.where(model.eigenvalues > 1e-12, model.eigenvalues, np.inf)
    t2 = np.sum(proj ** 2 / lam, axis=-1)
    recon = proj @ model.components
    resid = z - recon
    # channels standardized with the epsilon floor are excluded from SPE
    resid = np.where(model.standardizer.constant, 0.0, resid)
    spe = np.sum(resid ** 2, axis=-1)
    return t2, spe


def pca_statistics(model: PCAModel, frame):
    """Hotelling T2 and SPE for one frame, plus the alarm flag."""
    if np.any(model.eigenvalues <= 1e-12):
        warnings.warn("degenerate eigenvalue excluded from T2")
    values = frame.values if isinstance(frame, TelemetryFrame) else frame
    z = model.standardizer.transform(model._select(values))
    t2, spe = _batch_statistics(model, z)
    alarm = bool(t2 > model.t2_threshold or spe > model.spe_threshold)
    return float(t2), float(spe), alarm


def statistics_trace(model: PCAModel, frames):
    """Vectorized (t2, spe, alarm) over a whole trace."""
    data = model._select(_frame_values(frames))
    z = model.standardizer.transform(data)
    t2, spe = _batch_statistics(model, z)
    alarms = (t2 > model.t2_threshold) | (spe > model.spe_threshold)
    return t2, spe, alarms


def sustained_alarm_indices(alarms: np.ndarray, dwell: int) -> np.ndarray:
    """Indices at which `dwell` consecutive per-frame alarms have accumulated."""
    alarms = np.asarray(alarms, dtype=bool)
    run = 0
    out = []
    for i, a in enumerate(alarms):
        run = run + 1 if a else 0
        if run >= dwell:
            out.append(i)
    return np.array(out, dtype=int)


def save_pca(model: PCAModel, path) -> None:
    doc = {
        "mean": model.standardizer.mean.tolist(),
        "std": model.standardizer.std.tolist(),
        "components": model.components.tolist(),
        "eigenvalues": model.eigenvalues.tolist(),
        "t2_threshold": model.t2_threshold,
        "spe_threshold": model.spe_threshold,
        "channel_order": list(model.channel_order),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_pca(path) -> PCAModel:
    with open(path) as fh:
        doc = json.load(fh)
    std = np.array(doc["std"])
    standardizer = Standardizer(mean=np.array(doc["mean"]), std=std,
                                constant=std <= STD_EPS)
    return PCAModel(standardizer=standardizer,
                    components=np.array(doc["components"]),
                    eigenvalues=np.array(doc["eigenvalues"]),
                    t2_threshold=doc["t2_threshold"],
                    spe_threshold=doc["spe_threshold"],
                    channel_order=tuple(doc["channel_order"]))
