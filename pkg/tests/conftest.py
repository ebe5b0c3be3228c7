"""Shared test helpers: finite-difference gradient oracle and tiny fixtures."""

import numpy as np
import pytest

from radiomap import compute


def numeric_gradient(fn, x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central finite differences of a scalar-valued ``fn`` at ``x``.

    ``fn`` maps an ndarray to a python float. Independent of the autodiff
    tape by construction.
    """
    x = x.astype(np.float32)
    g = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """L2-norm relative error ||a-b|| / max(||a||, ||b||, floor)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def check_gradient(build_loss, tensors, h: float = 1e-3, tol: float = 1e-3):
    """Assert autodiff gradients of ``build_loss(tensors)`` match FD.

    ``build_loss`` takes the tensors and returns a scalar Tensor; it is
    re-invoked for every finite-difference probe so the oracle never reuses
    the tape.
    """
    loss = build_loss(*tensors)
    for t in tensors:
        t.zero_grad()
    loss.backward()
    for idx, t in enumerate(tensors):
        analytic = t.grad.copy()

        def scalar_fn(x, _idx=idx):
            datas = [u.data for u in tensors]
            datas[_idx] = x
            fresh = [compute.Tensor(d) for d in datas]
            return float(build_loss(*fresh).data)

        numeric = numeric_gradient(scalar_fn, t.data.copy(), h=h)
        err = relative_error(analytic, numeric)
        assert err < tol, f"gradient mismatch on input {idx}: rel err {err:.2e}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
