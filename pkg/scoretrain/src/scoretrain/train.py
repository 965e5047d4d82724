"""Training loop for the score network pair, with resumable checkpoints.

Both networks are trained in the same pass: the first-order model on the
sampled multi-level DSM objective, the second-order one on the trace-matching
objective with the first-order output detached (or replaced by an analytic
oracle). All randomness flows through one torch.Generator whose state is
checkpointed, so a resumed run reproduces the uninterrupted one.
"""

import numpy as np
import torch

from .grid import NoiseLevelGrid
from .losses import exact_gaussian_s1, sampled_unified_loss1, sampled_unified_loss2
from .models import make_models


def _lr_at(base_lr, epoch, epochs, milestones=(0.6, 0.85)):
    factor = 1.0
    for frac in milestones:
        if epoch >= frac * epochs:
            factor *= 0.1
    return base_lr * factor


def train(samples: np.ndarray, grid: NoiseLevelGrid, epochs: int,
          batch_size: int = 256, lr: float = 0.05, seed: int = 0,
          model_kind: str = "linear", train_first: bool = True,
          train_second: bool = True, exact_first_sigma2=None, resume=None):
    """Train the score pair on (count, N, M) complex samples; returns a checkpoint.

    The caller supplies power-normalized channels (see data.normalize_power).
    With exact_first_sigma2 set, the second-order target uses the analytic
    Gaussian score instead of the learned first-order model.
    """
    samples = np.asarray(samples, dtype=complex)
    count, n, m = samples.shape
    data = torch.from_numpy(samples)

    model1, model2 = make_models(model_kind, len(grid))
    opt1 = torch.optim.Adam(model1.parameters(), lr=lr)
    opt2 = torch.optim.Adam(model2.parameters(), lr=lr)
    gen = torch.Generator()
    gen.manual_seed(seed)
    start_epoch = 0
    curve = []

    if resume is not None:
        if resume["kind"] != model_kind or tuple(resume["taus"]) != grid.taus:
            raise ValueError("checkpoint does not match the requested run")
        model1.load_state_dict(resume["model1"])
        model2.load_state_dict(resume["model2"])
        opt1.load_state_dict(resume["opt1"])
        opt2.load_state_dict(resume["opt2"])
        gen.set_state(resume["gen_state"])
        start_epoch = resume["epoch"]
        curve = list(resume["curve"])

    if exact_first_sigma2 is not None:
        s1_fn = exact_gaussian_s1(float(exact_first_sigma2))
    else:
        s1_fn = model1

    for epoch in range(start_epoch, epochs):
        lr_now = _lr_at(lr, epoch, epochs)
        for group in opt1.param_groups:
            group["lr"] = lr_now
        for group in opt2.param_groups:
            group["lr"] = lr_now

        perm = torch.randperm(count, generator=gen)
        l1_sum, l2_sum, batches = 0.0, 0.0, 0
        for lo in range(0, count, batch_size):
            hb = data[perm[lo:lo + batch_size]]
            if train_first:
                loss1 = sampled_unified_loss1(model1, grid, hb, gen)
                opt1.zero_grad()
                loss1.backward()
                opt1.step()
                l1_sum += float(loss1.detach())
            if train_second:
                loss2 = sampled_unified_loss2(model2, s1_fn, grid, hb, gen)
                opt2.zero_grad()
                loss2.backward()
                opt2.step()
                l2_sum += float(loss2.detach())
            batches += 1
        curve.append((epoch, l1_sum / batches, l2_sum / batches))

    return {
        "kind": model_kind,
        "taus": list(grid.taus),
        "n": n, "m": m,
        "model1": model1.state_dict(),
        "model2": model2.state_dict(),
        "opt1": opt1.state_dict(),
        "opt2": opt2.state_dict(),
        "epoch": epochs,
        "gen_state": gen.get_state(),
        "curve": curve,
        "has_first": True,
        "has_second": bool(train_second),
        "config": {"batch_size": batch_size, "lr": lr, "seed": seed,
                   "count": count, "train_first": train_first,
                   "train_second": train_second,
                   "exact_first_sigma2": exact_first_sigma2},
    }


def gaussian_checkpoint(sigma2: float):
    """Analytic checkpoint: the server computes exact Gaussian scores from it."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    return {"kind": "gaussian", "sigma2": float(sigma2),
            "has_first": True, "has_second": True}


def save_checkpoint(ckpt, path):
    torch.save(ckpt, path)


def load_checkpoint(path):
    # checkpoints are local trusted artifacts; they contain plain dicts
    return torch.load(path, weights_only=False)
