"""Tour of the three benchmark forward models.

Run:  python3 demos/01_simulators_tour.py
"""

import torch

from seqdesign.simulators import build_simulator, make_digits_corpus
from seqdesign.simulators import ces, image, location

rng = torch.Generator().manual_seed(0)

# --- Location finding: K sources, log-intensity readings -------------------
print("== location finding ==")
lf = build_simulator("lf-dad-k2-t30")
theta = lf.sample_prior(1, rng)
print("theta (two sources):", theta[0].tolist())
for xi in (torch.tensor([[0.0, 0.0]]), theta[:, :2].clone()):
    mu = location.signal_strength(theta, xi)
    x = lf.simulate(theta, xi, lf.sample_noise(1, rng))
    print(f"  design {xi[0].tolist()} -> signal {mu.item():9.3f}, "
          f"observation {x.item():7.3f}")
print("  sensing exactly at a source saturates the signal at b + 1/m.")

# --- CES: rated basket comparisons ------------------------------------------
print("\n== constant elasticity of substitution ==")
cs = build_simulator("ces-t10")
theta = cs.sample_prior(1, rng)
rho, alpha, log_u = theta[0, 0], theta[0, 1:4], theta[0, 4]
print(f"preferences: rho={rho:.3f} alpha={alpha.tolist()} log_u={log_u:.3f}")
for name, xi in [
    ("identical baskets        ", torch.tensor([[50.0, 50, 50, 50, 50, 50]])),
    ("mildly different baskets ", torch.tensor([[60.0, 40, 55, 45, 55, 45]])),
    ("extreme baskets          ", torch.tensor([[100.0, 100, 100, 0, 0, 0]])),
]:
    x = cs.simulate(theta, xi, torch.zeros(1))
    print(f"  {name} -> rating {x.item():.6f}")
print("  informative designs sit between indifference (0.5) and saturation.")

# --- Image discovery: masked measurements of a hidden digit -----------------
print("\n== image discovery ==")
corpus = make_digits_corpus("/tmp/seqdesign-demo-digits.npz", size=14)
sim = image.ImageDiscoverySimulator(noise_level=1e-3, image_size=14,
                                    halfwidth=3.5, corpus=corpus)
theta = sim.sample_prior(1, rng)
xi = torch.tensor([[0.5, 0.5]])
x = sim.simulate(theta, xi, sim.sample_noise(1, rng))
mask = image.design_mask(xi, 14, halfwidth=3.5)


def sketch(img, label):
    chars = " .:-=+*#%@"
    print(f"  {label}:")
    for row in img:
        print("    " + "".join(chars[min(int(v * 9.999), 9)] for v in row.tolist()))


sketch(theta[0, 0], "hidden digit")
sketch(mask[0], "measurement mask at the center")
sketch(x[0, 0], "observation (masked digit + noise)")
