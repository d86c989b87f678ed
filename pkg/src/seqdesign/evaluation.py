"""Policy and posterior quality metrics.

sPCE estimates a lower bound on the total expected information gain of a
design policy by contrasting the likelihood of the generated history under
the true parameter against a set of prior draws; it is bounded above by
log(1 + L).  Image-posterior quality uses windowed SSIM and mean-normalized
RMSE, aggregated per rollout step over a validation corpus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import ContractError, DomainError, UnsupportedMetricError
from .simulators.base import Simulator


# ---------------------------------------------------------------------------
# Design sources for evaluation rollouts


class PolicyDesigner:
    """Frozen policy + summary proposing designs from the running history."""

    def __init__(self, policy, summary_net):
        self.policy = policy
        self.summary_net = summary_net

    def start(self, batch: int):
        return {"designs": [], "observations": [],
                "h": self.summary_net.empty_summary(batch)}

    def propose(self, state, sim: Simulator, rng) -> torch.Tensor:
        return self.policy(state["h"])

    def record(self, state, xi, x):
        state["designs"].append(xi)
        state["observations"].append(x)
        state["h"] = self.summary_net(torch.stack(state["designs"], dim=1),
                                      torch.stack(state["observations"], dim=1))


class RandomDesigner:
    """Designs drawn fresh from the design prior (the random baseline)."""

    def start(self, batch: int):
        return {"batch": batch}

    def propose(self, state, sim: Simulator, rng) -> torch.Tensor:
        return sim.sample_design_prior(state["batch"], rng)

    def record(self, state, xi, x):
        pass


class FixedDesigner:
    """A constant design at every step (toy models, diagnostics)."""

    def __init__(self, xi: torch.Tensor):
        self.xi = xi

    def start(self, batch: int):
        return {"batch": batch}

    def propose(self, state, sim: Simulator, rng) -> torch.Tensor:
        return self.xi.unsqueeze(0).expand(state["batch"], -1)

    def record(self, state, xi, x):
        pass


@torch.no_grad()
def rollout_histories(sim: Simulator, designer, theta: torch.Tensor, steps: int,
                      rng: torch.Generator):
    """Generate (designs, observations) for a batch of parameters."""
    batch = theta.shape[0]
    state = designer.start(batch)
    designs, observations = [], []
    for _ in range(steps):
        xi = designer.propose(state, sim, rng)
        x = sim.simulate(theta, xi, sim.sample_noise(batch, rng))
        designer.record(state, xi, x)
        designs.append(xi)
        observations.append(x)
    return torch.stack(designs, dim=1), torch.stack(observations, dim=1)


# ---------------------------------------------------------------------------
# sPCE


@dataclass
class SPCEResult:
    horizons: list
    means: dict          # horizon -> float
    ses: dict            # horizon -> float
    values: torch.Tensor  # (L0, len(horizons)) per-rollout estimates
    contrastive_size: int

    def mean(self, horizon=None) -> float:
        return self.means[horizon or self.horizons[-1]]

    def se(self, horizon=None) -> float:
        return self.ses[horizon or self.horizons[-1]]


def spce(sim: Simulator, designer, contrastive_size: int, n_outer: int,
         steps: int, rng: torch.Generator, horizons=None,
         outer_batch: int = 125, chunk_size: int = 4096) -> SPCEResult:
    """Sequential prior contrastive estimation of the total information gain.

    For each of `n_outer` rollouts with theta_0 from the prior and designs
    from `designer`, the history log-likelihood of theta_0 is contrasted
    against `contrastive_size` fresh prior draws (resampled independently
    per rollout, streamed in chunks).  Returns the mean and standard error
    at each requested horizon prefix; every per-rollout value is bounded by
    log(1 + L).
    """
    if not sim.has_likelihood:
        raise UnsupportedMetricError(
            f"sPCE needs per-step log-likelihoods; {sim.spec.name!r} has none")
    horizons = sorted(horizons or [steps])
    if horizons[-1] > steps or horizons[0] < 1:
        raise ContractError("horizons must lie in 1..steps")
    h_idx = torch.tensor([h - 1 for h in horizons])
    log_l1 = math.log(contrastive_size + 1)

    all_values = []
    remaining_outer = n_outer
    while remaining_outer > 0:
        b0 = min(outer_batch, remaining_outer)
        remaining_outer -= b0
        theta0 = sim.sample_prior(b0, rng)
        designs, observations = rollout_histories(sim, designer, theta0, steps, rng)

        # Per-step log-likelihood of the generating parameter, (b0, steps).
        ll0 = sim.log_likelihood(observations.double(),
                                 theta0.double().unsqueeze(1),
                                 designs.double()).cumsum(-1)
        ll0_h = ll0[:, h_idx]                       # (b0, H)
        running = ll0_h.clone()                     # l = 0 term of the logsumexp

        remaining = contrastive_size
        while remaining > 0:
            c = min(chunk_size, remaining)
            remaining -= c
            thetas = sim.sample_prior(b0 * c, rng).reshape(b0, c, -1).double()
            ll = sim.log_likelihood(observations.double().unsqueeze(1),
                                    thetas.unsqueeze(2),
                                    designs.double().unsqueeze(1))
            cum = ll.cumsum(-1)[:, :, h_idx]        # (b0, c, H)
            running = torch.logaddexp(running, cum.logsumexp(dim=1))

        all_values.append(ll0_h - running + log_l1)

    values = torch.cat(all_values, dim=0)
    means = {h: values[:, j].mean().item() for j, h in enumerate(horizons)}
    ses = {h: (values[:, j].std(unbiased=True) / math.sqrt(n_outer)).item()
           for j, h in enumerate(horizons)}
    return SPCEResult(horizons=horizons, means=means, ses=ses, values=values,
                      contrastive_size=contrastive_size)


# ---------------------------------------------------------------------------
# Image metrics


def _gaussian_window(size: int, sigma: float, dtype) -> torch.Tensor:
    half = (size - 1) / 2.0
    coords = torch.arange(size, dtype=dtype) - half
    g = torch.exp(-coords.square() / (2.0 * sigma * sigma))
    g = g / g.sum()
    return g.outer(g)


def ssim(a: torch.Tensor, b: torch.Tensor, data_range: float = 1.0,
         window_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean structural similarity with a Gaussian window.

    Luminance/contrast/structure exponents are all 1; constants come from
    the dynamic range.  Local statistics use valid windows only, so images
    must be at least `window_size` on each side.
    """
    a, b = torch.as_tensor(a), torch.as_tensor(b)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    a = a.reshape(1, 1, *a.shape[-2:]).double()
    b = b.reshape(1, 1, *b.shape[-2:]).double()
    if min(a.shape[-2:]) < window_size:
        raise ContractError("image smaller than the SSIM window")
    kernel = _gaussian_window(window_size, sigma, a.dtype)[None, None]
    conv = torch.nn.functional.conv2d
    mu_a = conv(a, kernel)
    mu_b = conv(b, kernel)
    var_a = conv(a * a, kernel) - mu_a.square()
    var_b = conv(b * b, kernel) - mu_b.square()
    cov = conv(a * b, kernel) - mu_a * mu_b
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a.square() + mu_b.square() + c1) * (var_a + var_b + c2)
    return (num / den).mean().item()


def nrmse(sample: torch.Tensor, truth: torch.Tensor) -> float:
    """Root-mean-square error normalized by the mean of the reference image."""
    sample, truth = torch.as_tensor(sample).double(), torch.as_tensor(truth).double()
    if sample.shape != truth.shape:
        raise ContractError(f"shape mismatch {tuple(sample.shape)} vs {tuple(truth.shape)}")
    mean = truth.mean()
    if mean <= 0:
        raise DomainError("reference image must have positive mean")
    return ((sample - truth).square().mean().sqrt() / mean).item()


@dataclass
class StepCurves:
    """Per-step aggregates of a sample-based image metric over a corpus."""

    steps: list
    ssim_mean: list
    ssim_q25: list
    ssim_q75: list
    nrmse_mean: list
    nrmse_q25: list
    nrmse_q75: list

    def rows(self, label: str):
        out = []
        for j, t in enumerate(self.steps):
            out.append({"policy": label, "metric": "ssim", "step": t,
                        "mean": self.ssim_mean[j], "q25": self.ssim_q25[j],
                        "q75": self.ssim_q75[j]})
            out.append({"policy": label, "metric": "nrmse", "step": t,
                        "mean": self.nrmse_mean[j], "q25": self.nrmse_q25[j],
                        "q75": self.nrmse_q75[j]})
        return out


@torch.no_grad()
def eval_id_curves(designer, posterior, sim: Simulator, images: torch.Tensor,
                   steps: int, samples_per_step: int, rng: torch.Generator,
                   sampler_steps: int | None = None,
                   batch: int = 16) -> StepCurves:
    """SSIM/NRMSE of posterior samples against the truth at each rollout step.

    For every validation image: run the rollout, draw `samples_per_step`
    posterior samples at each step, average the metric over samples, then
    aggregate mean and interquartile range over the corpus.
    """
    per_image = {"ssim": [], "nrmse": []}
    for lo in range(0, len(images), batch):
        theta = images[lo:lo + batch]
        b = theta.shape[0]
        state = designer.start(b)
        ssim_steps, nrmse_steps = [], []
        for _ in range(steps):
            xi = designer.propose(state, sim, rng)
            x = sim.simulate(theta, xi, sim.sample_noise(b, rng))
            designer.record(state, xi, x)
            h = state["h"] if "h" in state else None
            if h is None:
                raise ContractError("eval_id_curves needs a summary-carrying designer")
            h_rep = h.repeat_interleave(samples_per_step, dim=0)
            draws = posterior.sample(h_rep, b * samples_per_step, rng,
                                     n_steps=sampler_steps)
            draws = draws.reshape(b, samples_per_step, *draws.shape[1:])
            s_vals = torch.tensor([
                [ssim(draws[i, s, 0], theta[i, 0]) for s in range(samples_per_step)]
                for i in range(b)])
            n_vals = torch.tensor([
                [nrmse(draws[i, s, 0], theta[i, 0]) for s in range(samples_per_step)]
                for i in range(b)])
            ssim_steps.append(s_vals.mean(dim=1))
            nrmse_steps.append(n_vals.mean(dim=1))
        per_image["ssim"].append(torch.stack(ssim_steps, dim=1))
        per_image["nrmse"].append(torch.stack(nrmse_steps, dim=1))

    ssim_all = torch.cat(per_image["ssim"], dim=0)    # (N, steps)
    nrmse_all = torch.cat(per_image["nrmse"], dim=0)
    q = torch.tensor([0.25, 0.75], dtype=ssim_all.dtype)
    s_q = torch.quantile(ssim_all, q, dim=0)
    n_q = torch.quantile(nrmse_all, q, dim=0)
    return StepCurves(
        steps=list(range(1, steps + 1)),
        ssim_mean=ssim_all.mean(0).tolist(),
        ssim_q25=s_q[0].tolist(), ssim_q75=s_q[1].tolist(),
        nrmse_mean=nrmse_all.mean(0).tolist(),
        nrmse_q25=n_q[0].tolist(), nrmse_q75=n_q[1].tolist())


class RandomSummaryDesigner(RandomDesigner):
    """Random designs, but still maintaining the summary for posterior reads."""

    def __init__(self, summary_net):
        self.summary_net = summary_net

    def start(self, batch: int):
        return {"batch": batch, "designs": [], "observations": [],
                "h": self.summary_net.empty_summary(batch)}

    def record(self, state, xi, x):
        state["designs"].append(xi)
        state["observations"].append(x)
        state["h"] = self.summary_net(torch.stack(state["designs"], dim=1),
                                      torch.stack(state["observations"], dim=1))
