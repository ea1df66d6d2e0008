"""Frozen-feature probes: logistic-regression accuracy and silhouette."""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import silhouette_score
from sklearn.model_selection import train_test_split
from sklearn.preprocessing import StandardScaler

from ..errors import ProbeDataError

PROBE_L2 = 1e-4
PROBE_TOL = 1e-6


def _check_labels(labels: np.ndarray, min_per_class: int = 2) -> None:
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2:
        raise ProbeDataError("need at least two classes")
    if counts.min() < min_per_class:
        raise ProbeDataError(f"every class needs at least {min_per_class} samples")


def linear_probe(features, labels, seed: int = 0, test_fraction: float = 0.2, standardize: bool = True) -> float:
    """Top-1 held-out accuracy of multinomial logistic regression on frozen features.

    Stratified split, L2 penalty ``1e-4`` on the mean cross-entropy, L-BFGS run
    until the projected gradient falls below ``1e-6``.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if len(x) != len(y):
        raise ProbeDataError("features and labels differ in length")
    _check_labels(y)
    try:
        x_tr, x_te, y_tr, y_te = train_test_split(x, y, test_size=test_fraction, stratify=y, random_state=seed)
    except ValueError as exc:
        raise ProbeDataError(str(exc)) from exc
    if standardize:
        scaler = StandardScaler().fit(x_tr)
        x_tr, x_te = scaler.transform(x_tr), scaler.transform(x_te)
    clf = LogisticRegression(C=1.0 / (PROBE_L2 * len(x_tr)), tol=PROBE_TOL, max_iter=20000)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        clf.fit(x_tr, y_tr)
    return float((clf.predict(x_te) == y_te).mean())


def silhouette(features, labels) -> float:
    """Mean silhouette coefficient under Euclidean distance."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    _check_labels(y)
    return float(silhouette_score(x, y, metric="euclidean"))
