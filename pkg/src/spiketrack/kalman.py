"""Constant-velocity Kalman filter on (cx, cy, aspect, height) with NSA measurement noise."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BBox

NSA_FLOOR = 1e-2
STD_POSITION = 1.0 / 20
STD_VELOCITY = 1.0 / 160


class CovarianceError(ValueError):
    pass


@dataclass
class KalmanState:
    mean: np.ndarray        # (8,)
    covariance: np.ndarray  # (8, 8)

    def box(self) -> BBox:
        cx, cy, a, h = self.mean[:4]
        return BBox(float(cx), float(cy), float(a * h), float(h))

    def copy(self) -> "KalmanState":
        return KalmanState(self.mean.copy(), self.covariance.copy())


def bbox_to_xyah(b: BBox) -> np.ndarray:
    return np.array([b.cx, b.cy, b.w / b.h, b.h], dtype=np.float64)


def check_covariance(P: np.ndarray, tol: float = 1e-9) -> None:
    if not np.all(np.isfinite(P)):
        raise CovarianceError("covariance has non-finite entries")
    scale = max(1.0, float(np.abs(P).max()))
    if np.abs(P - P.T).max() > tol * scale:
        raise CovarianceError("covariance is not symmetric")
    if np.linalg.eigvalsh(P).min() < -tol * scale:
        raise CovarianceError("covariance is not positive semidefinite")


class KalmanFilter:
    """DeepSORT-style motion model; noise standard deviations scale with box height."""

    ndim = 4

    def __init__(self, std_position: float = STD_POSITION, std_velocity: float = STD_VELOCITY,
                 nsa_floor: float = NSA_FLOOR):
        self.std_position = std_position
        self.std_velocity = std_velocity
        self.nsa_floor = nsa_floor
        self.F = np.eye(8)
        self.F[:4, 4:] = np.eye(4)
        self.H = np.eye(4, 8)

    def initiate(self, box: BBox) -> KalmanState:
        z = bbox_to_xyah(box)
        h = z[3]
        std = [2 * self.std_position * h, 2 * self.std_position * h, 1e-2, 2 * self.std_position * h,
               10 * self.std_velocity * h, 10 * self.std_velocity * h, 1e-5, 10 * self.std_velocity * h]
        return KalmanState(np.r_[z, np.zeros(4)], np.diag(np.square(std)))

    def process_noise(self, mean: np.ndarray) -> np.ndarray:
        h = mean[3]
        std = [self.std_position * h, self.std_position * h, 1e-2, self.std_position * h,
               self.std_velocity * h, self.std_velocity * h, 1e-5, self.std_velocity * h]
        return np.diag(np.square(std))

    def measurement_noise(self, mean: np.ndarray) -> np.ndarray:
        h = mean[3]
        std = [self.std_position * h, self.std_position * h, 1e-1, self.std_position * h]
        return np.diag(np.square(std))

    def predict(self, s: KalmanState) -> KalmanState:
        mean = self.F @ s.mean
        cov = self.F @ s.covariance @ self.F.T + self.process_noise(s.mean)
        return KalmanState(mean, 0.5 * (cov + cov.T))

    def nsa_scale(self, det_conf: float) -> float:
        if not 0.0 <= det_conf <= 1.0:
            raise ValueError("detection confidence must lie in [0, 1]")
        return max(1.0 - det_conf, self.nsa_floor)

    def update(self, s: KalmanState, z: BBox, det_conf: float = 0.0) -> KalmanState:
        """Kalman update with measurement noise scaled by ``max(1 - conf, floor)``."""
        check_covariance(s.covariance)
        R = self.nsa_scale(det_conf) * self.measurement_noise(s.mean)
        P = s.covariance
        S = self.H @ P @ self.H.T + R
        # K = P H^T S^-1 via a Cholesky solve
        chol = np.linalg.cholesky(S)
        PHt = P @ self.H.T
        K = np.linalg.solve(chol.T, np.linalg.solve(chol, PHt.T)).T
        innovation = bbox_to_xyah(z) - self.H @ s.mean
        mean = s.mean + K @ innovation
        # Joseph form keeps the posterior symmetric PSD
        IKH = np.eye(8) - K @ self.H
        cov = IKH @ P @ IKH.T + K @ R @ K.T
        return KalmanState(mean, 0.5 * (cov + cov.T))


_DEFAULT = KalmanFilter()


def kalman_predict(s: KalmanState) -> KalmanState:
    return _DEFAULT.predict(s)


def kalman_update_nsa(s: KalmanState, z: BBox, det_conf: float) -> KalmanState:
    return _DEFAULT.update(s, z, det_conf)
