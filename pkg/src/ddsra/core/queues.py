from __future__ import annotations

import numpy as np


def queue_update(queues: np.ndarray, scheduled: np.ndarray, rates: np.ndarray) -> np.ndarray:
    """One step of Q_m <- max(Q_m - 1{m scheduled} + Gamma_m, 0)."""
    q = np.asarray(queues, dtype=float)
    served = np.asarray(scheduled, dtype=float)
    return np.maximum(q - served + np.asarray(rates, dtype=float), 0.0)


def lyapunov(queues: np.ndarray) -> float:
    q = np.asarray(queues, dtype=float)
    return 0.5 * float(q @ q)
