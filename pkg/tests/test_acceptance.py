"""End-to-end acceptance checks, one PASS/FAIL line each.

The training-based checks run the reference configuration in
``configs/acceptance.cfg`` through the command-line interface; together they
take several minutes. Deselect with ``-m "not acceptance"``.
"""
import time
from collections import deque
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from highway_dqn import nn
from highway_dqn.cli import main
from highway_dqn.config import OUTPUT_DIR_ENV, emit_config, parse_config
from highway_dqn.dqn import (EpsilonSchedule, LearningCurve, ReplayBuffer, Transition,
                             TransitionBatch, compute_targets, epsilon_at, select_action)
from highway_dqn.evaluation import (compare_standard_untrained, find_preset, parse_report,
                                    read_report, report_to_text)
from highway_dqn.mdp import RewardConstants, compute_reward
from highway_dqn.sim import Action, RoadConfig, VehicleState, WorldState, detect_collisions

pytestmark = pytest.mark.acceptance

REFERENCE = Path(__file__).resolve().parent.parent / "configs" / "acceptance.cfg"
TRAIN_BUDGET_S = 600
COMPARE_BUDGET_S = 600


@pytest.fixture
def verdict(capsys):
    def report(label, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
        assert ok, detail
    return report


def _train(directory: Path, monkeypatch, seed=None):
    cfg = parse_config(REFERENCE)
    if seed is not None:
        cfg = replace(cfg, run=replace(cfg.run, seed=seed))
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "run.cfg"
    path.write_text(emit_config(cfg))
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(directory / "out"))
    start = time.perf_counter()
    code = main(["train", "--config", str(path)])
    elapsed = time.perf_counter() - start
    assert code == 0
    return path, directory / "out", elapsed


@pytest.fixture(scope="module")
def reference_runs(tmp_path_factory):
    """Two independent trainings of the reference config (seed 0)."""
    mp = pytest.MonkeyPatch()
    try:
        runs = [_train(tmp_path_factory.mktemp(f"ref{k}"), mp) for k in range(2)]
    finally:
        mp.undo()
    return runs


# 1 -------------------------------------------------------------------------

def _max_relative_fd_error(params, states, actions, targets, h=1e-5):
    _, grads = nn.loss_and_gradients(params, states, actions, targets)
    worst = 0.0
    for arr, g in zip(params.arrays(), grads.arrays()):
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            plus, _ = nn.loss_and_gradients(params, states, actions, targets)
            flat[i] = old - h
            minus, _ = nn.loss_and_gradients(params, states, actions, targets)
            flat[i] = old
            numeric = (plus - minus) / (2 * h)
            scale = max(abs(numeric), abs(gflat[i]), 1e-8)
            worst = max(worst, abs(numeric - gflat[i]) / scale)
    return worst


def test_gradient_exactness(verdict):
    start = time.perf_counter()
    cases = [((25, (64, 64), 5), 0), ((25, (64, 64), 5), 1), ((25, (32,), 5), 2),
             ((25, (16, 8), 5), 3), ((10, (), 5), 4), ((25, (64, 32), 5), 5)]
    errors = []
    for (n_in, hidden, n_out), seed in cases:
        rng = np.random.default_rng(seed)
        p = nn.init_params(nn.NetworkSpec(n_in, hidden, n_out), seed)
        p = nn.ParameterSet(p.spec, p.weights, tuple(rng.normal(0, 0.1, b.shape) for b in p.biases))
        states = rng.uniform(-1, 1, (8, n_in))
        actions = rng.integers(0, n_out, 8)
        targets = rng.normal(0, 1, 8)
        errors.append(_max_relative_fd_error(p, states, actions, targets))
    elapsed = time.perf_counter() - start
    ok = max(errors) < 1e-4 and elapsed < 60
    verdict("gradient exactness", ok,
            f"max rel error {max(errors):.2e} over {len(cases)} networks (< 1e-4), {elapsed:.1f} s (< 60 s)")


# 2 -------------------------------------------------------------------------

def test_bellman_targets(verdict):
    rng = np.random.default_rng(0)
    spec = nn.NetworkSpec(25, (32, 32), 5)
    params = nn.init_params(spec, 0)
    gamma = 0.95
    batch = [Transition(rng.uniform(-1, 1, 25), int(rng.integers(5)), float(rng.normal()),
                        rng.uniform(-1, 1, 25), bool(rng.random() < 0.3)) for _ in range(100)]
    y = compute_targets(params, TransitionBatch.from_transitions(batch), gamma)

    def scalar_q(x):
        h = list(x)
        for k, (w, b) in enumerate(zip(params.weights, params.biases)):
            out = []
            for i in range(w.shape[0]):
                acc = float(b[i])
                for j in range(w.shape[1]):
                    acc += float(w[i, j]) * h[j]
                out.append(max(acc, 0.0) if k < len(params.weights) - 1 else acc)
            h = out
        return h

    terminal_exact = all(y[i] == t.reward for i, t in enumerate(batch) if t.done)
    oracle = [t.reward if t.done else t.reward + gamma * max(scalar_q(t.next_state)) for t in batch]
    err = float(np.max(np.abs(y - np.array(oracle))))
    ok = terminal_exact and err < 1e-12
    verdict("Bellman targets", ok,
            f"terminal y == r exactly: {terminal_exact}; max abs error {err:.1e} on 100 transitions (< 1e-12)")


# 3 -------------------------------------------------------------------------

def test_reward_formula(verdict):
    road = RoadConfig(lane_count=4)

    def world(lane, v):
        return WorldState.from_vehicles(road, [VehicleState(0, lane, 0.0, 0.0, v, v, lane, controlled=True)])

    best = compute_reward(world(3, 30.0), 0, Action.IDLE)
    worst = compute_reward(world(0, 20.0), 0, Action.IDLE)
    deltas = []
    for penalty in (-1.0, -5.0, -0.25):
        c = RewardConstants(collision_penalty=penalty)
        for lane, v in ((0, 20.0), (2, 26.5), (3, 30.0)):
            w = world(lane, v)
            d = compute_reward(w, 0, Action.IDLE, c, collided=True) - compute_reward(w, 0, Action.IDLE, c)
            deltas.append(abs(d - penalty))
    ok = abs(best - 0.5) < 1e-12 and worst == 0.0 and max(deltas) < 1e-12
    verdict("reward formula", ok,
            f"max {best:.12g} (0.5), min {worst:.12g} (0.0), collision delta error {max(deltas):.1e}")


# 4 -------------------------------------------------------------------------

def test_replay_and_exploration(verdict):
    rng = np.random.default_rng(0)
    buf, shadow = ReplayBuffer(capacity=50), deque(maxlen=50)
    fifo_ok = True
    for k in range(400):
        t = Transition(np.full(3, float(k)), k % 5, float(k), np.full(3, k + 1.0), False)
        buf.push(t)
        shadow.append(k)
        fifo_ok &= [int(x.reward) for x in buf.transitions()] == list(shadow)

    no_dupes = True
    for _ in range(200):
        batch = buf.sample(32, rng)
        no_dupes &= len(set(batch.indices.tolist())) == 32

    params = nn.init_params(nn.NetworkSpec(25, (8,), 5), 0)
    obs = np.zeros(25)
    draws = np.bincount([select_action(params, obs, 1.0, rng) for _ in range(100_000)], minlength=5)
    freqs = draws / draws.sum()
    uniform_ok = bool(np.all(np.abs(freqs - 0.2) <= 0.01))

    sched = EpsilonSchedule()
    ends_ok = (epsilon_at(sched, 0) == 1.0 and epsilon_at(sched, sched.decay_steps) == 0.05
               and epsilon_at(sched, 10 ** 7) == 0.05)
    ok = fifo_ok and no_dupes and uniform_ok and ends_ok
    verdict("replay and exploration", ok,
            f"FIFO vs shadow queue {fifo_ok}; minibatches without replacement {no_dupes}; "
            f"eps=1 frequencies {np.round(freqs, 4).tolist()} (0.2 +/- 0.01); schedule ends {ends_ok}")


# 5 -------------------------------------------------------------------------

def test_training_determinism(reference_runs, verdict):
    (_, out_a, t_a), (_, out_b, t_b) = reference_runs
    same = all((out_a / n).read_bytes() == (out_b / n).read_bytes()
               for n in ("weights.bin", "learning_curve.csv"))
    ok = same and max(t_a, t_b) < TRAIN_BUDGET_S
    verdict("training determinism", ok,
            f"byte-identical weights and curve: {same}; 20000 steps in {t_a:.0f} s / {t_b:.0f} s "
            f"(< {TRAIN_BUDGET_S} s)")


# 6 -------------------------------------------------------------------------

def improved_by_half(rewards) -> bool:
    """Mean of the last 10 episodes exceeds the first 10 by at least 50 %.

    "Exceeds by 50 %" is measured against the magnitude of the early mean,
    so a negative early mean still needs a real improvement.
    """
    first, last = float(np.mean(rewards[:10])), float(np.mean(rewards[-10:]))
    return last - first >= 0.5 * abs(first) and last > first


def test_learning_progress(reference_runs, tmp_path_factory, verdict):
    curves = [LearningCurve.from_csv((reference_runs[0][1] / "learning_curve.csv").read_text())]
    mp = pytest.MonkeyPatch()
    try:
        for seed in (1, 2):
            _, out, _ = _train(tmp_path_factory.mktemp(f"seed{seed}"), mp, seed=seed)
            curves.append(LearningCurve.from_csv((out / "learning_curve.csv").read_text()))
    finally:
        mp.undo()
    details, passed = [], 0
    for seed, curve in zip((0, 1, 2), curves):
        r = curve.episode_rewards
        good = improved_by_half(r)
        passed += good
        details.append(f"seed {seed}: first10 {np.mean(r[:10]):.2f} -> last10 {np.mean(r[-10:]):.2f}")
    verdict("learning progress", passed >= 2, f"{passed}/3 seeds improved by >= 50% ({'; '.join(details)})")


# 7 -------------------------------------------------------------------------

def test_trained_vs_untrained(reference_runs, verdict, monkeypatch):
    cfg_path, out, _ = reference_runs[0]
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(out))
    start = time.perf_counter()
    code = main(["compare", "--config", str(cfg_path), "--weights", str(out / "weights.bin"),
                 "--format", "json"])
    elapsed = time.perf_counter() - start
    assert code == 0
    report = read_report(out / "comparison.json", "json")
    s, u = report.total("S"), report.total("U")
    episodes = parse_config(cfg_path).eval.episodes_per_preset
    checks = {
        "collision S <= 0.75 U": s.collision_rate <= 0.75 * u.collision_rate,
        "speed S > U": s.mean_speed > u.mean_speed,
        "timesteps S > U": s.mean_timesteps > u.mean_timesteps,
        "reward S >= 2 U": s.mean_total_reward >= 2 * u.mean_total_reward,
        f"runtime < {COMPARE_BUDGET_S} s": elapsed < COMPARE_BUDGET_S,
    }
    detail = (f"{s.episodes} episodes per policy ({episodes} per cell); "
              f"collision S {s.collision_rate:.3f} vs U {u.collision_rate:.3f}; "
              f"speed {s.mean_speed:.2f} vs {u.mean_speed:.2f}; "
              f"timesteps {s.mean_timesteps:.2f} vs {u.mean_timesteps:.2f}; "
              f"reward {s.mean_total_reward:.2f} vs {u.mean_total_reward:.2f}; {elapsed:.0f} s; "
              + ", ".join(f"{k}: {'ok' if v else 'NO'}" for k, v in checks.items()))
    verdict("trained vs untrained", all(checks.values()), detail)


# 8 -------------------------------------------------------------------------

def test_collision_oracle(verdict):
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(500):
        road = RoadConfig(lane_count=int(rng.integers(1, 5)), length=float(rng.choice([60.0, 200.0, 1000.0])))
        vs = []
        for i in range(int(rng.integers(0, 15))):
            lane = int(rng.integers(road.lane_count))
            vs.append(VehicleState(i, lane, float(rng.uniform(0, road.length)),
                                   float(rng.uniform(-2, 2)), 25.0, 25.0, lane,
                                   length=float(rng.uniform(3, 8)), width=float(rng.uniform(1.5, 2.5))))
        world = WorldState.from_vehicles(road, vs)
        expected = set()
        for a in range(len(vs)):
            for b in range(a + 1, len(vs)):
                va, vb = vs[a], vs[b]
                ds = abs(va.s - vb.s) % road.length
                ds = min(ds, road.length - ds)
                ya, yb = road.lane_center(va.lane) + va.d, road.lane_center(vb.lane) + vb.d
                if ds < (va.length + vb.length) / 2 and abs(ya - yb) < (va.width + vb.width) / 2:
                    expected.add(frozenset((va.id, vb.id)))
        mismatches += detect_collisions(world) != expected
    verdict("collision oracle", mismatches == 0, f"{mismatches} discrepancies over 500 random worlds")


# 9 -------------------------------------------------------------------------

def test_round_trips(verdict):
    bit_exact = True
    for k, hidden in enumerate([(), (7,), (256, 256), (5, 4, 3)]):
        rng = np.random.default_rng(k)
        p = nn.init_params(nn.NetworkSpec(25, hidden, 5), k)
        p = nn.ParameterSet(p.spec, p.weights, tuple(rng.normal(size=b.shape) for b in p.biases))
        blob = nn.serialize_params(p)
        q = nn.deserialize_params(blob)
        bit_exact &= q.equals(p) and nn.serialize_params(q) == blob

    suite = [find_preset("preset02/regular"), find_preset("preset08/dense")]
    report = compare_standard_untrained(nn.init_params(nn.NetworkSpec(25, (8,), 5), 1),
                                        nn.NetworkSpec(25, (8,), 5), suite, 3, seed=2)
    back_csv = parse_report(report_to_text(report, "csv"), "csv")
    csv_err = max(abs(a - b) for x, y in zip(report.rows, back_csv.rows)
                  for a, b in zip(x.as_row()[3:], y.as_row()[3:]))
    json_exact = parse_report(report_to_text(report, "json"), "json").rows == report.rows
    ok = bit_exact and csv_err <= 1e-4 and json_exact
    verdict("serialization and report round-trips", ok,
            f"weights bit-exact {bit_exact}; CSV max error {csv_err:.1e} (<= 1e-4); JSON exact {json_exact}")
