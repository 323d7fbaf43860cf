"""Binary and multinomial logistic regression by Newton/IRLS.

Both solvers stop after ``max_iter`` iterations or once the largest absolute
coefficient update falls below ``tol``. A tiny ridge keeps the normal
equations solvable under (quasi-)separation; steps that raise the deviance
are halved, and a non-finite step ends the iteration at the last good
iterate. Design matrices must already contain the intercept column.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit, log_softmax


@dataclass(frozen=True)
class NewtonFit:
    coef: np.ndarray
    converged: bool
    n_iter: int


def _logit_deviance(X, y, beta):
    eta = X @ beta
    return -2.0 * np.sum(y * log_expit(eta) + (1 - y) * log_expit(-eta))


def irls_logistic(X, y, *, max_iter: int = 50, tol: float = 1e-8,
                  ridge: float = 1e-10) -> NewtonFit:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    p = X.shape[1]
    beta = np.zeros(p)
    dev = _logit_deviance(X, y, beta)
    eye = ridge * np.eye(p)
    for it in range(1, max_iter + 1):
        mu = expit(X @ beta)
        w = mu * (1.0 - mu)
        H = X.T @ (w[:, None] * X) + eye
        g = X.T @ (y - mu)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            return NewtonFit(beta, False, it)
        for _ in range(30):
            new = beta + step
            new_dev = _logit_deviance(X, y, new)
            if np.isfinite(new_dev) and new_dev <= dev + 1e-12 * abs(dev):
                break
            step = step / 2
        else:
            return NewtonFit(beta, False, it)
        beta, dev = new, new_dev
        if np.max(np.abs(step)) < tol:
            return NewtonFit(beta, True, it)
    return NewtonFit(beta, False, max_iter)


def _mlogit_eta(X, B):
    # last class is the reference with linear predictor 0
    eta = X @ B
    return np.hstack([eta, np.zeros((X.shape[0], 1))])


def _mlogit_deviance(X, Y, B):
    return -2.0 * np.sum(Y * log_softmax(_mlogit_eta(X, B), axis=1))


def newton_multinomial(X, labels, n_classes: int, *, max_iter: int = 50,
                       tol: float = 1e-8, ridge: float = 1e-10) -> NewtonFit:
    """Fit a softmax model; ``coef`` has shape (p, n_classes - 1)."""
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    m = n_classes - 1
    Y = np.zeros((n, n_classes))
    Y[np.arange(n), labels] = 1.0
    B = np.zeros((p, m))
    if m == 0:
        return NewtonFit(B, True, 0)
    dev = _mlogit_deviance(X, Y, B)
    eye = ridge * np.eye(p * m)
    for it in range(1, max_iter + 1):
        P = np.exp(log_softmax(_mlogit_eta(X, B), axis=1))[:, :m]
        g = (X.T @ (Y[:, :m] - P)).reshape(-1, order="F")
        H = np.empty((p * m, p * m))
        for a in range(m):
            for b in range(a, m):
                w = P[:, a] * ((a == b) - P[:, b])
                blk = X.T @ (w[:, None] * X)
                H[a * p:(a + 1) * p, b * p:(b + 1) * p] = blk
                H[b * p:(b + 1) * p, a * p:(a + 1) * p] = blk
        try:
            step = np.linalg.solve(H + eye, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H + eye, g, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            return NewtonFit(B, False, it)
        step = step.reshape((p, m), order="F")
        for _ in range(30):
            new = B + step
            new_dev = _mlogit_deviance(X, Y, new)
            if np.isfinite(new_dev) and new_dev <= dev + 1e-12 * abs(dev):
                break
            step = step / 2
        else:
            return NewtonFit(B, False, it)
        B, dev = new, new_dev
        if np.max(np.abs(step)) < tol:
            return NewtonFit(B, True, it)
    return NewtonFit(B, False, max_iter)


def multinomial_proba(X, coef) -> np.ndarray:
    return np.exp(log_softmax(_mlogit_eta(np.asarray(X, dtype=float), coef), axis=1))
