import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from highway_dqn import nn
from highway_dqn.evaluation import (CSV_HEADER, AggregateReport, EpisodeMetrics, ScenarioPreset,
                                    compare_standard_untrained, episode_bounds_ok, evaluate_agent,
                                    export_report, find_preset, fixed_policy, format_table,
                                    greedy_policy, parse_report, read_report, report_to_text,
                                    run_episode, standard_suite)
from highway_dqn.sim import Action, TrafficConfig

SMALL = nn.NetworkSpec(25, (16,), 5)


@pytest.fixture(scope="module")
def small_report():
    suite = [find_preset("preset01/regular"), find_preset("preset05/dense")]
    params = nn.init_params(SMALL, 11)
    return compare_standard_untrained(params, SMALL, suite, 3, seed=4)


class TestSuite:
    def test_shape(self):
        suite = standard_suite()
        names = [p.name for p in suite]
        assert len(suite) == 24 and len(set(names)) == 24
        assert sorted({p.group for p in suite}) == [f"preset{k:02d}" for k in range(1, 9)]
        assert {p.lane_count for p in suite} == {2, 3, 4, 5}
        assert {p.noise_sigma for p in suite} == {0.0, 0.02}
        assert {p.traffic.density for p in suite} == {"none", "regular", "dense"}

    def test_traffic_within_ego_band(self):
        for p in standard_suite():
            lo, hi = p.traffic.traffic_speed_range
            assert 20.0 <= lo < hi <= 30.0

    def test_seed_bases_distinct(self):
        bases = [p.seed_base for p in standard_suite()]
        assert len(set(bases)) == len(bases)

    def test_find_preset(self):
        assert find_preset("preset03/dense").lane_count == 3
        with pytest.raises(KeyError):
            find_preset("preset09/none")


class TestRunEpisode:
    def test_idle_on_empty_road(self):
        m = run_episode(fixed_policy(Action.IDLE), find_preset("preset04/none"), 0)
        assert not m.collided and m.timesteps == 50

    def test_deterministic(self):
        preset = find_preset("preset02/dense")
        policy = greedy_policy(nn.init_params(SMALL, 2))
        assert run_episode(policy, preset, 17) == run_episode(policy, preset, 17)

    def test_collision_timesteps(self):
        # timesteps counts the steps finished before the crash
        preset = find_preset("preset01/dense")
        for seed in range(10):
            steps = []
            m = run_episode(fixed_policy(Action.FASTER), preset, seed,
                            on_step=lambda k, a, out, env: steps.append(k))
            assert m.timesteps == (len(steps) - 1 if m.collided else len(steps))
        assert m.collided

    def test_fixed_policy_range(self):
        with pytest.raises(ValueError):
            fixed_policy(5)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from([p.name for p in standard_suite()]))
    def test_metric_bounds(self, seed, name):
        m = run_episode(greedy_policy(nn.init_params(SMALL, seed % 7)), find_preset(name), seed)
        assert episode_bounds_ok(m)
        assert 20.0 <= m.mean_speed <= 30.0


class TestAggregation:
    def test_singleton(self):
        preset = find_preset("preset07/regular")
        policy = fixed_policy(Action.FASTER)
        report = evaluate_agent(policy, [preset], 1)
        m = run_episode(policy, preset, preset.seed_base)
        total = report.total("S")
        assert total.collision_rate in (0.0, 1.0)
        assert (total.collision_rate, total.mean_speed, total.mean_timesteps,
                total.mean_total_reward) == (float(m.collided), m.mean_speed, m.timesteps,
                                             m.total_reward)

    def test_weighted_mean_identity(self, small_report):
        for tag in "SU":
            cells = [c for c in small_report.cells if c.policy == tag]
            n = sum(c.episodes for c in cells)
            expected = sum(c.collision_rate * c.episodes for c in cells) / n
            assert small_report.total(tag).collision_rate == pytest.approx(expected, abs=1e-12)

    def test_pairing(self, small_report):
        pairs = {tag: [(r.preset, r.seed) for r in small_report.episodes if r.policy == tag]
                 for tag in "SU"}
        assert pairs["S"] == pairs["U"] and len(pairs["S"]) == 6

    def test_untrained_is_init_params(self):
        suite = [find_preset("preset06/regular")]
        u = nn.init_params(SMALL, 4)
        report = compare_standard_untrained(u, SMALL, suite, 2, seed=4)
        s_rows = [r.metrics for r in report.episodes if r.policy == "S"]
        u_rows = [r.metrics for r in report.episodes if r.policy == "U"]
        assert s_rows == u_rows

    def test_spec_mismatch(self):
        with pytest.raises(nn.ShapeMismatchError):
            compare_standard_untrained(nn.init_params(SMALL, 0), nn.NetworkSpec(), [], 1, 0)

    def test_argument_errors(self):
        with pytest.raises(ValueError):
            evaluate_agent(fixed_policy(1), [], 1)
        with pytest.raises(ValueError):
            evaluate_agent(fixed_policy(1), standard_suite()[:1], 0)

    def test_multi_agent_evaluation(self):
        params = nn.init_params(nn.NetworkSpec(50, (8,), 5), 0)
        report = evaluate_agent(greedy_policy(params), [find_preset("preset04/regular")], 2,
                                n_agents=2)
        assert report.total("S").episodes == 2


class TestReportIO:
    def test_csv_header_and_rows(self, small_report):
        lines = report_to_text(small_report, "csv").splitlines()
        assert tuple(lines[0].split(",")) == CSV_HEADER
        assert len(lines) == 1 + 4 + 2
        assert lines[-1].startswith("total,")

    def test_csv_round_trip(self, small_report, tmp_path):
        path = tmp_path / "report.csv"
        export_report(small_report, path, "csv")
        back = read_report(path, "csv")
        assert len(back.rows) == len(small_report.rows)
        for a, b in zip(small_report.rows, back.rows):
            assert (a.preset, a.policy, a.episodes) == (b.preset, b.policy, b.episodes)
            for x, y in zip(a.as_row()[3:], b.as_row()[3:]):
                assert abs(x - y) <= 1e-4
        assert os.listdir(tmp_path) == ["report.csv"]

    def test_json_round_trip_exact(self, small_report):
        back = parse_report(report_to_text(small_report, "json"), "json")
        assert back.rows == small_report.rows

    def test_unknown_format(self, small_report):
        with pytest.raises(ValueError):
            report_to_text(small_report, "xml")
        with pytest.raises(ValueError):
            parse_report("a,b\n", "csv")

    def test_table_shape(self, small_report):
        lines = format_table(small_report).splitlines()
        assert lines[0].split() == ["Metric", "preset01", "preset05", "total"]
        assert len(lines) == 1 + 4 * 2
        assert lines[1].startswith("Collision rate  S")
        assert lines[2].split()[0] == "U"


def test_bounds_helper():
    assert episode_bounds_ok(EpisodeMetrics(False, 25.0, 50, 10.0))
    assert not episode_bounds_ok(EpisodeMetrics(False, 25.0, 51, 10.0))
    assert not episode_bounds_ok(EpisodeMetrics(True, 25.0, 3, float("nan")))


def test_custom_preset():
    preset = ScenarioPreset("custom/none", 2, TrafficConfig(density="none"), 0.0, 5)
    report = evaluate_agent(fixed_policy(Action.IDLE), [preset], 2)
    assert report.cell("custom/none", "S").mean_timesteps == 50.0
    assert isinstance(report, AggregateReport)
