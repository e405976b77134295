"""Fast acceptance checks shared by the CLI selftest and the test suite.

Each check returns (passed, detail). They are deterministic: every random
quantity comes from a fixed seed.
"""

from __future__ import annotations

import filecmp
from pathlib import Path

import numpy as np

from fedslice import baselines, config as config_mod, federation, nn, seeding
from fedslice import agent as agent_mod
from fedslice import experiments
from fedslice.config import ScenarioConfig, apply_smoke
from fedslice.env import OBS_DIM, constraint_g3


def check_gradient_oracle(n_nets: int = 100, h: float = 1e-5,
                          rel_tol: float = 1e-4, abs_floor: float = 1e-8):
    """Analytic backward vs central finite differences on random nets."""
    rng = np.random.default_rng(20240811)
    worst = 0.0
    for _ in range(n_nets):
        params = nn.ParamSet.init([12, 16, 16, 4], rng)
        x = rng.normal(size=12)
        gout = rng.normal(size=4)
        out, cache = nn.forward(params, x)
        grads = nn.backward(params, cache, gout)
        for li, (w, b) in enumerate(params.layers):
            for arr, g_arr in ((w, grads[li][0]), (b, grads[li][1])):
                flat = arr.ravel()
                g_flat = g_arr.ravel()
                for idx in range(flat.size):
                    keep = flat[idx]
                    flat[idx] = keep + h
                    up = float(nn.forward(params, x)[0] @ gout)
                    flat[idx] = keep - h
                    dn = float(nn.forward(params, x)[0] @ gout)
                    flat[idx] = keep
                    numeric = (up - dn) / (2.0 * h)
                    analytic = g_flat[idx]
                    err = abs(analytic - numeric)
                    lim = max(rel_tol * max(abs(analytic), abs(numeric)), abs_floor)
                    worst = max(worst, err / lim)
                    if err > lim:
                        return False, f"gradient mismatch {analytic} vs {numeric}"
    return True, f"max error ratio {worst:.3g} over {n_nets} nets"


def _scalar_update(value: float, count: int) -> federation.ModelUpdate:
    return federation.ModelUpdate(
        gnb=0, params=nn.ParamSet([(np.array([[value]]), np.array([value]))]),
        n_samples=count, loss=0.0,
    )


def check_fedavg_algebra(tol: float = 1e-12):
    """Permutation invariance, convex envelope, and the 1000/3000 example."""
    rng = np.random.default_rng(7)
    updates = []
    for i in range(5):
        params = nn.ParamSet.init([4, 8, 2], rng)
        updates.append(federation.ModelUpdate(
            gnb=i, params=params, n_samples=int(rng.integers(100, 5000)),
            loss=0.0,
        ))
    avg = federation.fedavg(updates)
    perm = federation.fedavg(updates[::-1])
    for (w1, b1), (w2, b2) in zip(avg.layers, perm.layers):
        if np.max(np.abs(w1 - w2)) > tol or np.max(np.abs(b1 - b2)) > tol:
            return False, "permutation changed the aggregate"
    for li, (w, b) in enumerate(avg.layers):
        lo_w = np.min([u.params.layers[li][0] for u in updates], axis=0)
        hi_w = np.max([u.params.layers[li][0] for u in updates], axis=0)
        if np.any(w < lo_w - tol) or np.any(w > hi_w + tol):
            return False, "aggregate escaped the convex envelope"
    pair = federation.fedavg([_scalar_update(0.0, 1000), _scalar_update(4.0, 3000)])
    got = float(pair.layers[0][0][0, 0])
    if abs(got - 3.0) > tol:
        return False, f"weighted example gave {got}, wanted 3.0"
    return True, "permutation, envelope, and weighted example all within 1e-12"


def check_dual_projection(n_updates: int = 100_000, tol: float = 1e-9):
    """Nonnegativity after random updates; exact linear growth."""
    rng = np.random.default_rng(11)
    duals = agent_mod.DualVariables(values=np.zeros(3),
                                    step_sizes=np.full(3, 0.01))
    lam = rng.uniform(0, 1, size=3)
    duals = agent_mod.DualVariables(values=lam, step_sizes=np.full(3, 0.01))
    batch = rng.normal(scale=50.0, size=(n_updates // 100, 100, 3))
    for block in batch:
        for g_hat in block:
            duals = agent_mod.dual_update(duals, g_hat)
            if np.any(duals.values < 0):
                return False, "projection let a multiplier go negative"
    growth = agent_mod.DualVariables(values=np.zeros(3),
                                     step_sizes=np.full(3, 0.01))
    g_const = np.array([3.7, 0.2, 12.0])
    for k in range(1, 1001):
        growth = agent_mod.dual_update(growth, g_const)
        expect = k * 0.01 * g_const
        if np.max(np.abs(growth.values - expect)) > tol:
            return False, f"linear growth drifted at step {k}"
    return True, f"{n_updates} random updates stayed >= 0; growth exact to 1e-9"


def check_simplex_feasibility(n_samples: int = 100_000):
    """g3 is exactly zero for sampled policy actions and every baseline."""
    rng = np.random.default_rng(5)
    n_actors = 20
    per_actor = n_samples // n_actors
    for _ in range(n_actors):
        actor = nn.ParamSet.init([OBS_DIM, 16, 3], rng)
        for _ in range(per_actor):
            obs = rng.uniform(0, 1, size=OBS_DIM)
            action, _ = agent_mod.act(actor, obs, rng)
            if constraint_g3(action) != 0.0:
                return False, f"policy action {action} has g3 > 0"
    for _ in range(2000):
        for action in (
            baselines.equal_slicing(),
            baselines.queue_proportional(rng.integers(0, 50, size=3)),
            baselines.random_dirichlet(rng),
        ):
            if constraint_g3(action) != 0.0:
                return False, f"baseline action {action} has g3 > 0"
    return True, f"g3 == 0 for {n_samples} policy and 6000 baseline actions"


def check_determinism(workdir: Path):
    """Two identical-seed smoke runs produce byte-identical files."""
    cfg = apply_smoke(ScenarioConfig())
    cfg.run.seeds = 5
    paths = []
    for tag in ("a", "b"):
        out = Path(workdir) / f"det_{tag}"
        experiments.run_training(cfg, experiments.LEARNED_POLICY, out)
        paths.append(out)
    mismatches = _tree_diff(paths[0], paths[1])
    if mismatches:
        return False, f"files differ: {mismatches[:5]}"
    return True, "smoke output trees are byte-identical"


def _tree_diff(a: Path, b: Path):
    files_a = sorted(p.relative_to(a) for p in Path(a).rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in Path(b).rglob("*") if p.is_file())
    if files_a != files_b:
        return ["<file lists differ>"]
    bad = []
    for rel in files_a:
        if not filecmp.cmp(a / rel, b / rel, shallow=False):
            bad.append(str(rel))
    return bad


def check_statistical_oracles():
    """Fading power, Poisson moments, and Dirichlet means vs closed forms."""
    from fedslice import channel, traffic

    rng = seeding.stream(123, seeding.CHANNEL, 0)
    power = channel.sample_small_scale(rng, size=1_000_000)
    if abs(power.mean() - 1.0) > 0.01:
        return False, f"fading power mean {power.mean():.4f} off by >1%"
    tail = float(np.mean(power > 1.0))
    if abs(tail - np.exp(-1.0)) > 0.01 * np.exp(-1.0) + 0.005:
        return False, f"fading tail {tail:.4f} vs e^-1"
    rng = seeding.stream(123, seeding.TRAFFIC, 0)
    draws = rng.poisson(4.0, size=1_000_000)
    if abs(draws.mean() - 4.0) > 0.08:
        return False, f"Poisson mean {draws.mean():.4f} off by >2%"
    if abs(draws.var() - 4.0) > 0.12:
        return False, f"Poisson variance {draws.var():.4f} off by >3%"
    rng = seeding.stream(123, seeding.BASELINE, 0)
    samples = rng.dirichlet(np.ones(3), size=100_000)
    if np.max(np.abs(samples.mean(axis=0) - 1.0 / 3.0)) > 0.01:
        return False, "symmetric Dirichlet mean off by >0.01"
    return True, "fading, Poisson, and Dirichlet moments match closed forms"


def check_critic_fixed_point(tol: float = 0.01):
    """Single-state constant-reward value estimate reaches r/(1-gamma)."""
    rng = np.random.default_rng(21)
    obs = np.full(OBS_DIM, 0.5)
    critic = nn.ParamSet.init([OBS_DIM, 16, 16, 1], rng)
    opt = nn.AdamState(critic, 0.01)
    hyper = agent_mod.AgentHyper(discount=0.9, update_epochs=1, minibatch_size=64)
    batch = [
        agent_mod.Transition(
            state=obs, action=np.full(3, 1 / 3), adjusted=1.0, raw_reward=1.0,
            constraints=np.zeros(3), next_state=obs, log_prob=0.0, done=False,
        )
        for _ in range(64)
    ]
    target = 1.0 / (1.0 - 0.9)
    value = 0.0
    for _ in range(4000):
        critic, _ = agent_mod.critic_update(critic, batch, hyper, opt, rng)
        value = float(nn.forward(critic, obs)[0][0])
        if abs(value - target) <= tol * target / 2:
            break
    if abs(value - target) > tol * target:
        return False, f"value {value:.4f} did not reach {target} within 1%"
    return True, f"value converged to {value:.4f} (target {target})"


CHECKS = [
    ("gradient_oracle", check_gradient_oracle),
    ("fedavg_algebra", check_fedavg_algebra),
    ("dual_projection", check_dual_projection),
    ("simplex_feasibility", check_simplex_feasibility),
    ("statistical_oracles", check_statistical_oracles),
    ("critic_fixed_point", check_critic_fixed_point),
]


def run_all(workdir: Path, include_determinism: bool = True):
    """Run every check; yields (name, passed, detail)."""
    results = [(name, *fn()) for name, fn in CHECKS]
    if include_determinism:
        results.insert(4, ("determinism", *check_determinism(workdir)))
    return results
