"""Utility algebra, detach/window semantics, curricula, and deployment sessions."""

import math

import pytest
import torch
from torch import nn

from seqdesign.diffusion import CorruptionDraw
from seqdesign.errors import ContractError, HorizonError, ProtocolError
from seqdesign.rollout import (
    DeploySession,
    RolloutConfig,
    barrier,
    build_explore_schedule,
    build_length_schedule,
    explore_cosine,
    length_linear,
    train_rollout,
    utility_from_losses,
)
from seqdesign.simulators.base import Simulator, SimulatorSpec


class TestUtilityAlgebra:
    def test_single_loss(self):
        u = utility_from_losses([torch.tensor(5.0)])
        assert u.item() == -5.0

    def test_telescoping(self):
        losses = [torch.tensor(v) for v in (3.0, 2.0, 4.0)]
        assert utility_from_losses(losses).item() == -4.0

    def test_random_chains_value_level(self, rng):
        for _ in range(200):
            n = int(torch.randint(1, 11, (1,), generator=rng))
            losses = list(torch.randn(n, generator=rng, dtype=torch.float64))
            u = utility_from_losses(losses)
            assert abs(u.item() + losses[-1].item()) < 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            utility_from_losses([])

    def test_gradient_aggregates_all_losses(self):
        # Hand-built 3-step differentiable chain sharing two parameters.
        phi = torch.tensor(0.7, dtype=torch.float64, requires_grad=True)
        psi = torch.tensor(-0.4, dtype=torch.float64, requires_grad=True)

        def chain(p, q):
            return [(2.0 * p - 1.0) ** 2, torch.sigmoid(p) + q ** 2, p * q + q]

        losses = chain(phi, psi)
        (-utility_from_losses(losses)).backward()
        for par, i in ((phi, 0), (psi, 1)):
            eps = 1e-6
            args_hi = [phi.detach().clone(), psi.detach().clone()]
            args_lo = [phi.detach().clone(), psi.detach().clone()]
            args_hi[i] += eps
            args_lo[i] -= eps
            fd = (sum(chain(*args_hi)) - sum(chain(*args_lo))).item() / (2 * eps)
            assert abs(par.grad.item() - fd) < 1e-3 * max(1.0, abs(fd))

    def test_barrier_preserves_values(self, rng):
        x = torch.randn(5, generator=rng, requires_grad=True)
        assert torch.equal(barrier(x), x.detach())
        assert barrier(x).grad_fn is None


class TestSchedules:
    def test_start_points(self):
        assert length_linear(0, n_ramp=100, start=2, end=6) == 2
        assert explore_cosine(0, n_decay=100) == 1.0

    def test_end_points(self):
        assert length_linear(100, n_ramp=100, start=2, end=6) == 6
        assert length_linear(500, n_ramp=100, start=2, end=6) == 6
        assert explore_cosine(100, n_decay=100) == 0.0

    def test_cosine_midpoint(self):
        assert abs(explore_cosine(50, n_decay=100) - 0.5) < 1e-12

    def test_monotone(self):
        vals = [length_linear(n, 200, 1, 9) for n in range(300)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))
        rhos = [explore_cosine(n, 200) for n in range(300)]
        assert all(b <= a for a, b in zip(rhos, rhos[1:]))

    def test_descriptors(self):
        f = build_length_schedule({"kind": "linear", "ramp_iters": 10, "start": 1,
                                   "end": 4}, horizon=4)
        assert f(0) == 1 and f(10) == 4
        g = build_explore_schedule({"kind": "cosine", "decay_iters": 10})
        assert g(0) == 1.0 and g(10) == 0.0
        h = build_explore_schedule({"kind": "constant", "value": 0.25})
        assert h(123) == 0.25


# ---------------------------------------------------------------------------
# Toy differentiable stack for gradient-semantics probes


class ToySim(Simulator):
    """x = theta + xi, 1-D design and parameter; noise enters additively."""

    has_likelihood = False

    def __init__(self, noise_scale=0.0):
        self.noise_scale = noise_scale
        self.spec = SimulatorSpec(name="toy", theta_dim=1, theta_shape=(1,),
                                  design_dim=1, obs_shape=())

    def sample_prior(self, n, rng):
        return torch.randn(n, 1, generator=rng)

    def sample_design_prior(self, n, rng):
        return torch.rand(n, 1, generator=rng)

    def sample_noise(self, n, rng):
        return torch.randn(n, generator=rng)

    def simulate(self, theta, xi, noise):
        return theta[..., 0] + xi[..., 0] + self.noise_scale * noise

    def design_in_domain(self, xi):
        return bool(torch.isfinite(xi).all())


class ToySummary(nn.Module):
    """h_t = w * sum_k (xi_k + x_k), a 1-D linear summary."""

    def __init__(self, w=0.3):
        super().__init__()
        self.w = nn.Parameter(torch.tensor(w, dtype=torch.float64))
        self.summary_shape = (1,)

    def forward(self, designs, observations):
        total = designs[..., 0].sum(1) + observations.sum(1)
        return (self.w * total).unsqueeze(-1)

    def empty_summary(self, batch):
        return torch.zeros(batch, 1, dtype=torch.float64)


class ToyPolicy(nn.Module):
    def __init__(self, w=0.5, b=0.2):
        super().__init__()
        self.w = nn.Parameter(torch.tensor(w, dtype=torch.float64))
        self.b = nn.Parameter(torch.tensor(b, dtype=torch.float64))

    def forward(self, h):
        return (self.w * h[..., 0] + self.b).unsqueeze(-1)


class ToyPosterior:
    """step_loss = (h - theta)^2; ignores the corruption draw."""

    def sample_corruption(self, n, rng):
        return CorruptionDraw(tau=torch.zeros(n), eps=torch.zeros(n, 1))

    def step_loss(self, theta, h, draw):
        return (h[..., 0] - theta[..., 0]) ** 2


def manual_chain_grad(theta, ws, wp, bp, r, nested):
    """Reference gradient of sum_t l_t w.r.t. the policy weight wp.

    Forward: xi_t = wp*h_{t-1} + bp, x_t = theta + xi_t,
    h_t = ws * sum_k (xi_k + x_k), l_t = (h_t - theta)^2, h_0 = 0.
    Under the default wiring the policy reads a barriered h, so
    d xi_k / d wp = h_{k-1} (value only); nested adds wp * dh_{k-1}/dwp.
    """
    h, dh = 0.0, 0.0
    total, grad = 0.0, 0.0
    total += (h - theta) ** 2  # l_0 with h_0 = 0, no wp dependence
    s, ds = 0.0, 0.0           # running sum of (xi_k + x_k) and its derivative
    for _ in range(r):
        xi = wp * h + bp
        dxi = h + (wp * dh if nested else 0.0)
        x = theta + xi
        s += xi + x
        ds += 2 * dxi
        h = ws * s
        dh = ws * ds
        total += (h - theta) ** 2
        grad += 2 * (h - theta) * dh
    return total, grad


class TestDetachSemantics:
    @pytest.mark.parametrize("nested", [False, True])
    def test_policy_gradient_matches_manual_recursion(self, nested):
        theta = torch.tensor([[1.3]], dtype=torch.float64)
        sim = ToySim(noise_scale=0.0)
        policy, summary, posterior = ToyPolicy(), ToySummary(), ToyPosterior()
        cfg = RolloutConfig(horizon=3, nested_bptt=nested)
        rng = torch.Generator().manual_seed(0)
        loss, trace = train_rollout(theta, policy, summary, posterior, sim, cfg,
                                    iteration=0, rng=rng, r=3)
        # The objective's gradient equals the gradient of the sum of losses.
        grad_wp = torch.autograd.grad(loss, policy.w)[0].item()
        _, expected = manual_chain_grad(1.3, ws=0.3, wp=0.5, bp=0.2, r=3,
                                        nested=nested)
        assert abs(grad_wp - expected) < 1e-9

    def test_loss_value_equals_final_step_loss(self):
        theta = torch.tensor([[0.7], [-0.4]], dtype=torch.float64)
        sim = ToySim()
        loss, trace = train_rollout(theta, ToyPolicy(), ToySummary(), ToyPosterior(),
                                    sim, RolloutConfig(horizon=4), 0,
                                    torch.Generator().manual_seed(0), r=4)
        assert torch.allclose(loss, trace.losses[-1].mean())
        assert torch.allclose(trace.utility, -trace.losses[-1])

    def test_prior_only_rollout(self):
        theta = torch.tensor([[0.7]], dtype=torch.float64)
        loss, trace = train_rollout(theta, ToyPolicy(), ToySummary(), ToyPosterior(),
                                    ToySim(), RolloutConfig(horizon=4), 0,
                                    torch.Generator().manual_seed(0), r=0)
        assert trace.rollout_length == 0
        assert torch.allclose(loss, trace.losses[0].mean())

    def test_policy_gradients_vanish_when_tokens_detached(self):
        # Zeroing the token path's gradient must leave no policy gradient:
        # the summary input to the policy is barriered.
        class DetachingSummary(ToySummary):
            def forward(self, designs, observations):
                return super().forward(barrier(designs), barrier(observations))

        theta = torch.tensor([[1.1]], dtype=torch.float64)
        policy = ToyPolicy()
        loss, _ = train_rollout(theta, policy, DetachingSummary(), ToyPosterior(),
                                ToySim(), RolloutConfig(horizon=3), 0,
                                torch.Generator().manual_seed(0), r=3)
        grads = torch.autograd.grad(loss, [policy.w, policy.b], allow_unused=True)
        for g in grads:
            assert g is None or g.abs().max() == 0

    def test_window_barrier_zeroes_old_token_gradients(self):
        theta = torch.tensor([[0.9]], dtype=torch.float64)
        W = 2
        cfg = RolloutConfig(horizon=6, window=W)
        loss, trace = train_rollout(theta, ToyPolicy(), ToySummary(), ToyPosterior(),
                                    ToySim(), cfg, 0,
                                    torch.Generator().manual_seed(0), r=6)
        for t in range(1, 7):
            loss_t = trace.losses[t].sum()
            for k in range(1, t + 1):  # token from step k, list index k-1
                g = torch.autograd.grad(loss_t, trace.designs[k - 1],
                                        retain_graph=True, allow_unused=True)[0]
                if k <= t - W:
                    assert g is None or g.abs().max() == 0, (t, k)
                else:
                    assert g is not None and g.abs().max() > 0, (t, k)

    def test_no_window_keeps_all_tokens_live(self):
        theta = torch.tensor([[0.9]], dtype=torch.float64)
        loss, trace = train_rollout(theta, ToyPolicy(), ToySummary(), ToyPosterior(),
                                    ToySim(), RolloutConfig(horizon=5), 0,
                                    torch.Generator().manual_seed(0), r=5)
        g = torch.autograd.grad(trace.losses[5].sum(), trace.designs[0],
                                retain_graph=True)[0]
        assert g.abs().max() > 0

    def test_explore_mixes_prior_designs(self):
        theta = torch.randn(64, 1, dtype=torch.float64,
                            generator=torch.Generator().manual_seed(1))
        cfg = RolloutConfig(horizon=3,
                            explore_schedule=lambda n: 0.5)
        _, trace = train_rollout(theta, ToyPolicy(), ToySummary(), ToyPosterior(),
                                 ToySim(), cfg, 0, torch.Generator().manual_seed(0),
                                 r=3)
        sources = torch.stack(trace.design_sources)
        assert (sources == 0).any() and (sources == 1).any()

    def test_fixed_length_uses_horizon(self):
        theta = torch.randn(4, 1, dtype=torch.float64,
                            generator=torch.Generator().manual_seed(2))
        cfg = RolloutConfig(horizon=5, fixed_length=True,
                            length_schedule=lambda n: 2)
        _, trace = train_rollout(theta, ToyPolicy(), ToySummary(), ToyPosterior(),
                                 ToySim(), cfg, 0, torch.Generator().manual_seed(0))
        assert trace.rollout_length == 5


class TestDeploySession:
    def _bundle(self):
        return ToyPolicy(), ToySummary(), ToyPosterior(), ToySim(noise_scale=0.1)

    def test_first_proposal_deterministic(self):
        policy, summary, posterior, sim = self._bundle()
        s1 = DeploySession(policy, summary, posterior, sim, horizon=3, seed=42)
        s2 = DeploySession(policy, summary, posterior, sim, horizon=3, seed=7)
        assert torch.equal(s1.propose(), s2.propose())

    def test_protocol_errors(self):
        policy, summary, posterior, sim = self._bundle()
        s = DeploySession(policy, summary, posterior, sim, horizon=2, seed=0)
        with pytest.raises(ProtocolError):
            s.observe()
        s.propose()
        with pytest.raises(ProtocolError):
            s.propose()
        s.observe()
        s.propose()
        s.observe()
        with pytest.raises(HorizonError):
            s.propose()

    def test_override_recorded(self):
        policy, summary, posterior, sim = self._bundle()
        s = DeploySession(policy, summary, posterior, sim, horizon=3, seed=0)
        s.propose()
        out = s.observe(override=torch.tensor([0.25]))
        assert out["design_source"] == "human-override"
        assert torch.equal(s.designs[0], torch.tensor([0.25]))
        trace = s.trace_dict()
        assert trace["design_sources"] == ["human-override"]

    def test_train_deploy_parity(self):
        policy, summary, posterior, sim = self._bundle()
        theta = torch.tensor([[0.8]], dtype=torch.float64)
        seed = 123
        loss, trace = train_rollout(theta, policy, summary, posterior, sim,
                                    RolloutConfig(horizon=4), 0,
                                    torch.Generator().manual_seed(seed), r=4)
        session = DeploySession(policy, summary, posterior, sim, horizon=4,
                                theta=theta, seed=seed).auto_rollout()
        for t in range(4):
            assert torch.equal(trace.designs[t][0].detach(), session.designs[t])
            assert torch.equal(trace.observations[t][0].detach(),
                               session.observations[t])

    def test_external_mode_parity(self):
        policy, summary, posterior, sim = self._bundle()
        theta = torch.tensor([[0.8]], dtype=torch.float64)
        seed = 5
        sim_session = DeploySession(policy, summary, posterior, sim, horizon=3,
                                    theta=theta, seed=seed).auto_rollout()
        ext = DeploySession(policy, summary, posterior, sim, horizon=3,
                            mode="external", seed=seed)
        noise_rng = torch.Generator().manual_seed(seed)
        for t in range(3):
            xi = ext.propose()
            noise = sim.sample_noise(1, noise_rng)
            x = sim.simulate(theta, xi.unsqueeze(0), noise)[0]
            ext.observe(observation=x)
        for t in range(3):
            assert torch.equal(sim_session.designs[t], ext.designs[t])
            assert torch.equal(sim_session.observations[t], ext.observations[t])
        assert torch.equal(sim_session.h, ext.h)

    def test_reproducible_traces(self):
        policy, summary, posterior, sim = self._bundle()
        t1 = DeploySession(policy, summary, posterior, sim, horizon=4,
                           seed=9).auto_rollout().trace_dict()
        t2 = DeploySession(policy, summary, posterior, sim, horizon=4,
                           seed=9).auto_rollout().trace_dict()
        assert t1 == t2

    def test_simulated_mode_rejects_observation(self):
        policy, summary, posterior, sim = self._bundle()
        s = DeploySession(policy, summary, posterior, sim, horizon=2, seed=0)
        s.propose()
        with pytest.raises(ProtocolError):
            s.observe(observation=torch.tensor(0.5))

    def test_out_of_domain_override_rejected(self):
        policy, summary, posterior, sim = self._bundle()
        s = DeploySession(policy, summary, posterior, sim, horizon=2, seed=0)
        s.propose()
        with pytest.raises(ContractError):
            s.observe(override=torch.tensor([float("inf")]))
