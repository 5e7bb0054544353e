"""Shared test helpers and the acceptance report hook.

Acceptance tests record one line per criterion through record_criterion();
the terminal-summary hook prints every recorded line at the end of the run
so the pass/fail verdicts are visible even when pytest captures stdout.
"""

import numpy as np
import pytest
import torch

ACCEPT_LINES: list[str] = []


def record_criterion(number: int, name: str, passed: bool, detail: str) -> None:
    line = f"[ACCEPT] criterion {number} ({name}): {'PASS' if passed else 'FAIL'} — {detail}"
    ACCEPT_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPT_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in ACCEPT_LINES:
        terminalreporter.write_line(line)


def rel_err(got: torch.Tensor, want: torch.Tensor) -> float:
    got = got.detach().double()
    want = want.detach().double()
    denom = want.abs().max().item()
    return (got - want).abs().max().item() / max(denom, 1e-12)


def central_diff(fn, x: torch.Tensor, eps: float = 1e-4) -> torch.Tensor:
    """Central finite-difference gradient of scalar-valued fn at x (64-bit)."""
    x = x.detach().clone()
    grad = torch.zeros_like(x)
    flat = x.view(-1)
    gflat = grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        hi = float(fn(x).detach())
        flat[i] = orig - eps
        lo = float(fn(x).detach())
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


def grad_matches_fd(fn, x: torch.Tensor, eps: float = 1e-4, tol: float = 1e-4) -> float:
    """Compare autograd's gradient of fn w.r.t. x against central differences.

    Returns the relative error (max-norm, scaled by the gradient magnitude).
    """
    leaf = x.detach().clone().requires_grad_(True)
    fn(leaf).backward()
    analytic = leaf.grad.detach().clone()
    numeric = central_diff(fn, x, eps=eps)
    err = rel_err(analytic, numeric)
    assert err <= tol, f"gradient mismatch: rel err {err:.3e} > {tol:g}"
    return err


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
