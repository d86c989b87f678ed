"""The two generative posterior backends on a toy 2-D Gaussian target.

Trains a small v-prediction diffusion model and a flow-matching model on the
same unconditional target, then samples both with the Euler ODE sampler.

Run:  python3 demos/02_posterior_backends.py
"""

import torch

from seqdesign.diffusion import (
    CosineVPSchedule,
    FlowLinearSchedule,
    diffusion_posterior_loss,
    fm_posterior_loss,
    sample_corruption,
    sample_posterior,
)
from seqdesign.networks.mlp import time_embedding

TARGET_MEAN = torch.tensor([2.0, -1.0])
TARGET_COV = torch.tensor([[1.0, 0.6], [0.6, 1.0]])
CHOL = torch.linalg.cholesky(TARGET_COV)

vp = CosineVPSchedule()
flow = FlowLinearSchedule()

print("cosine schedule checkpoints:")
for tau in (0.0, 0.25, 0.5, 0.75):
    t = torch.tensor(tau)
    print(f"  tau={tau:4.2f}  alpha={vp.alpha(t):.4f}  sigma={vp.sigma(t):.4f}"
          + (f"  logsnr={vp.logsnr(t):7.3f}" if 0 < tau < 1 else ""))


def make_net():
    torch.manual_seed(0)
    return torch.nn.Sequential(torch.nn.Linear(6, 128), torch.nn.GELU(),
                               torch.nn.Linear(128, 128), torch.nn.GELU(),
                               torch.nn.Linear(128, 2))


def train(kind):
    net = make_net()
    schedule = vp if kind == "diffusion" else flow

    def fwd(z, h, t):
        lam = schedule.logsnr(t.clamp(1e-5, 1 - 1e-5))
        return net(torch.cat([z, time_embedding(lam, 4)], -1))

    opt = torch.optim.Adam(net.parameters(), lr=1e-3)
    rng = torch.Generator().manual_seed(0)
    for step in range(2000):
        theta = torch.randn(256, 2, generator=rng) @ CHOL.T + TARGET_MEAN
        draw = sample_corruption(256, (2,), rng)
        if kind == "diffusion":
            loss = diffusion_posterior_loss(theta, None, draw, fwd, vp).mean()
        else:
            loss = fm_posterior_loss(theta, None, draw, fwd, flow).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 500 == 0:
            print(f"  [{kind}] step {step:4d} loss {loss.item():8.4f}")
    net.eval()
    return fwd, schedule


for kind in ("diffusion", "flow"):
    print(f"\ntraining the {kind} backend on N(mean=[2,-1], cov=[[1,.6],[.6,1]])")
    fwd, schedule = train(kind)
    samples = sample_posterior(fwd, None, 8192, 300, schedule,
                               torch.Generator().manual_seed(1), (2,))
    print(f"  sample mean {samples.mean(0).tolist()}")
    print(f"  sample cov  {torch.cov(samples.T).tolist()}")
