"""Denoising score matching objectives.

First order regresses the network onto the scaled injected noise:
l1(tau) = E || S1(H~, tau) + (H~ - H)/tau ||_F^2 with H~ = H + CN(0, tau I).
Second order matches only the trace of the Hessian diagonal against the
plug-in target built from the (frozen) first-order score:
l2(tau) = E | tr(S2) - ||b^||^2 + N*M/tau |^2, b^ = vec(S1 + (H~-H)/tau).
Multi-level objectives weight levels by tau and tau^2 respectively; training
uses the unbiased one-level-per-sample estimator of those sums.
"""

import torch


def perturb(h, tau, gen):
    """AWGN draw: returns (h_tilde, w) with w ~ CN(0, tau) per entry."""
    std = torch.sqrt(tau / 2).view(-1, 1, 1)
    w = torch.complex(torch.randn(h.shape, generator=gen, dtype=torch.float64),
                      torch.randn(h.shape, generator=gen, dtype=torch.float64)) * std
    return h + w, w


def _per_sample_l1(model, h, tau, level, gen):
    h_tilde, w = perturb(h, tau, gen)
    resid = model(h_tilde, tau, level) + w / tau.view(-1, 1, 1)
    return (resid.real ** 2 + resid.imag ** 2).sum(dim=(1, 2))


def dsm_loss1(model, h, tau: float, level: int, gen) -> torch.Tensor:
    """Single-level first-order DSM loss, averaged over the batch."""
    b = h.shape[0]
    tau_t = torch.full((b,), float(tau), dtype=torch.float64)
    lvl = torch.full((b,), int(level), dtype=torch.long)
    return _per_sample_l1(model, h, tau_t, lvl, gen).mean()


def unified_loss1(model, grid, h, gen) -> torch.Tensor:
    """Full weighted sum over the grid: sum_i tau_i * l1(tau_i)."""
    total = torch.zeros((), dtype=torch.float64)
    for i, tau in enumerate(grid.taus):
        total = total + tau * dsm_loss1(model, h, tau, i, gen)
    return total


def sampled_unified_loss1(model, grid, h, gen) -> torch.Tensor:
    """Unbiased estimator of unified_loss1: one uniformly drawn level per sample."""
    b = h.shape[0]
    level = torch.randint(len(grid), (b,), generator=gen)
    taus = torch.as_tensor(grid.taus, dtype=torch.float64)
    tau = taus[level]
    per = _per_sample_l1(model, h, tau, level, gen)
    return (len(grid) * tau * per).mean()


def _per_sample_l2(model2, s1_fn, h, tau, level, gen):
    h_tilde, w = perturb(h, tau, gen)
    with torch.no_grad():
        s1 = s1_fn(h_tilde, tau, level)
    b_hat = s1 + w / tau.view(-1, 1, 1)
    b_norm2 = (b_hat.real ** 2 + b_hat.imag ** 2).sum(dim=(1, 2))
    trace = model2(h_tilde, tau, level).sum(dim=(1, 2))
    nm = h.shape[1] * h.shape[2]
    return (trace - b_norm2 + nm / tau) ** 2


def dsm_loss2_trace(model2, s1_fn, h, tau: float, level: int, gen) -> torch.Tensor:
    """Single-level trace-matching loss; gradients reach model2 only."""
    b = h.shape[0]
    tau_t = torch.full((b,), float(tau), dtype=torch.float64)
    lvl = torch.full((b,), int(level), dtype=torch.long)
    return _per_sample_l2(model2, s1_fn, h, tau_t, lvl, gen).mean()


def unified_loss2(model2, s1_fn, grid, h, gen) -> torch.Tensor:
    total = torch.zeros((), dtype=torch.float64)
    for i, tau in enumerate(grid.taus):
        total = total + tau ** 2 * dsm_loss2_trace(model2, s1_fn, h, tau, i, gen)
    return total


def sampled_unified_loss2(model2, s1_fn, grid, h, gen) -> torch.Tensor:
    b = h.shape[0]
    level = torch.randint(len(grid), (b,), generator=gen)
    taus = torch.as_tensor(grid.taus, dtype=torch.float64)
    tau = taus[level]
    per = _per_sample_l2(model2, s1_fn, h, tau, level, gen)
    return (len(grid) * tau ** 2 * per).mean()


def exact_gaussian_s1(sigma2: float):
    """Analytic first-order score of CN(0, sigma2) data, for frozen-oracle runs."""

    def s1(h_tilde, tau, level):
        return -h_tilde / (sigma2 + tau.view(-1, 1, 1))

    return s1
