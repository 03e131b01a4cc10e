import numpy as np
import pytest

from gsvit import Config, DecoderConfig, ModelConfig, TrainConfig, backward, no_grad
from gsvit.tensor import clear_tape


def fd_gradcheck(fn, leaves, eps=1e-3, tol=1e-4):
    """Check reverse-mode grads of scalar fn() against central differences.

    `leaves` are the float64 tensors to differentiate; fn must be a
    deterministic function of their current data.
    """
    clear_tape()
    for t in leaves:
        t.grad = None
    loss = fn()
    assert loss.size == 1
    backward(loss)

    for t in leaves:
        assert t.grad is not None, "no gradient reached a leaf"
        assert t.grad.shape == t.shape
        g_ad = t.grad.data.copy()
        g_fd = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        fd_flat = g_fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                up = float(fn().data)
            flat[i] = orig - eps
            with no_grad():
                down = float(fn().data)
            flat[i] = orig
            fd_flat[i] = (up - down) / (2 * eps)
        denom = max(np.linalg.norm(g_fd), 1e-10)
        rel = np.linalg.norm(g_ad - g_fd) / denom
        assert rel < tol, f"gradient mismatch: rel err {rel:.3e} (tol {tol:.0e})"
        t.grad = None


def micro_config() -> Config:
    """Smallest practical model, for fast training-loop tests (32x32 input)."""
    enc = ModelConfig(resolution=32, patch_size=16, widths=(16,), blocks=(1,),
                      heads=(2,), mlps_per_side=1, mlp_ratio=2.0,
                      width_mults=(1.0,), latent_dim=16)
    dec = DecoderConfig(latent_dim=16, seed_channels=16, seed_hw=4,
                        channels=(8, 4, 3), kernels=(4, 4, 4), strides=(2, 2, 2),
                        pads=(1, 1, 1), se_scales=(8, 16), resolution=32)
    return Config(encoder=enc, decoder=dec, train=TrainConfig(batch=2))


_ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def record_acceptance(name: str) -> None:
    _ACCEPTANCE_RESULTS.append((name, "PASS"))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call" and report.failed and item.module.__name__ == "test_acceptance":
        _ACCEPTANCE_RESULTS.append((item.name, "FAIL"))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, status in _ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"[{status}] {name}")
