import numpy as np
import pytest

from quorum import rng as rngmod
from quorum.head import MCDropoutClassifier


@pytest.fixture(scope="session")
def four_class():
    """Small 4-class problem with a trained head and a labeled holdout pool."""
    g = rngmod.stream(42)
    means = {"a": (-3.0, -3.0), "b": (-3.0, 3.0), "c": (3.0, -3.0), "d": (3.0, 3.0)}
    X_train, y_train, X_hold, y_hold = [], [], [], []
    for label, mu in means.items():
        pts = g.normal(mu, 0.8, size=(50, 2))
        X_train.append(pts[:40])
        y_train += [label] * 40
        X_hold.append(pts[40:])
        y_hold += [label] * 10
    X_train = np.vstack(X_train)
    X_hold = np.vstack(X_hold)
    y_train = np.array(y_train)
    y_hold = np.array(y_hold)
    model = MCDropoutClassifier(epochs=40, seed=7).fit(X_train, y_train)
    return model, X_train, y_train, X_hold, y_hold
