import functools
import math
import random
import statistics

import pytest

from modelytics.profiler import (
    INSUFFICIENT, NORMAL, SUSPICIOUS, UNKNOWN, Component, MixtureProfile,
    ProfilerConfig, _merge)


def profile(**kw):
    return MixtureProfile(ProfilerConfig(**kw))


def feed(prof, values, slot=0):
    for v in values:
        prof.update(slot, v)
    return prof


class TestConfig:
    def test_rejects_bad_values(self):
        for kw in ({"k_max": 0}, {"tau": 0.0}, {"theta": 0.0},
                   {"theta": 1.0}, {"var_floor": 0.0}, {"slot_count": 0}):
            with pytest.raises(ValueError):
                ProfilerConfig(**kw)

    def test_defaults(self):
        cfg = ProfilerConfig()
        assert cfg.k_max == 3 and cfg.tau == 3.0 and cfg.n_min == 20


class TestSlotOf:
    def test_hour_of_week(self):
        prof = profile(slot_count=168)
        assert prof.slot_of(0) == 0
        assert prof.slot_of(3_600_000) == 1
        assert prof.slot_of(168 * 3_600_000) == 0
        assert prof.slot_of(169 * 3_600_000 + 17) == 1

    def test_offset_shifts_anchor(self):
        prof = profile(slot_count=24, slot_offset_ms=3_600_000)
        assert prof.slot_of(3_600_000) == 0


class TestWelford:
    def test_matches_two_pass_oracle(self):
        rng = random.Random(5)
        values = [rng.gauss(3.0, 0.4) for _ in range(500)]
        # k_max high enough that nothing gets evicted: pooling every
        # component must then reproduce the exact two-pass statistics
        prof = feed(profile(n_min=1, k_max=16), values)
        comps = prof.slots[0].components
        c = functools.reduce(_merge, comps)
        assert c.count == 500
        assert c.mean == pytest.approx(statistics.fmean(values), abs=1e-9)
        # spawned components carry a small synthetic spread seed, so the
        # pooled variance is near, not identical to, the two-pass value
        assert c.m2 / c.count == pytest.approx(
            statistics.pvariance(values), rel=0.01)

    def test_merge_is_exact_pooling(self):
        rng = random.Random(6)
        xs = [rng.gauss(0, 1) for _ in range(40)]
        ys = [rng.gauss(0.2, 1) for _ in range(25)]

        def comp(vals):
            c = Component(0, 0.0, 0.0)
            for v in vals:
                c.count += 1
                d = v - c.mean
                c.mean += d / c.count
                c.m2 += d * (v - c.mean)
            return c

        merged = _merge(comp(xs), comp(ys))
        assert merged.count == 65
        assert merged.mean == pytest.approx(statistics.fmean(xs + ys), abs=1e-9)
        assert merged.m2 / 65 == pytest.approx(
            statistics.pvariance(xs + ys), abs=1e-9)


class TestWarmup:
    def test_insufficient_before_n_min(self):
        prof = profile(n_min=20)
        for i in range(19):
            prof.update(0, 5.0)
            assert prof.probability(0, 5.0) is INSUFFICIENT
            assert prof.classify(0, 5.0) == UNKNOWN
            assert prof.expected_value(0) is INSUFFICIENT
        prof.update(0, 5.0)
        assert prof.probability(0, 5.0) == 1.0
        assert prof.classify(0, 5.0) == NORMAL

    def test_slots_warm_independently(self):
        prof = profile(n_min=2, slot_count=2)
        feed(prof, [1.0, 1.0], slot=0)
        assert prof.probability(0, 1.0) == 1.0
        assert prof.probability(1, 1.0) is INSUFFICIENT


class TestScoring:
    def test_probability_one_at_mean(self):
        prof = feed(profile(n_min=2), [10.0, 10.0, 10.0, 10.0])
        assert prof.probability(0, 10.0) == 1.0

    def test_tail_at_1_96_sigma(self):
        rng = random.Random(17)
        prof = feed(profile(n_min=20), [rng.gauss(0.0, 1.0) for _ in range(5000)])
        c = max(prof.slots[0].components, key=lambda c: c.count)
        assert c.count >= 4900
        sd = math.sqrt(c.m2 / c.count)
        p = prof.probability(0, c.mean + 1.96 * sd)
        assert p == pytest.approx(0.05, abs=0.002)

    def test_monotone_tail(self):
        rng = random.Random(23)
        prof = feed(profile(n_min=20), [rng.gauss(50.0, 2.0) for _ in range(2000)])
        ps = [prof.probability(0, 50.0 + k * 2.0) for k in range(0, 8)]
        assert all(a >= b for a, b in zip(ps, ps[1:]))
        assert ps[-1] < 1e-6

    def test_far_outlier_suspicious(self):
        rng = random.Random(2)
        prof = feed(profile(n_min=20), [rng.gauss(10.0, 1.0) for _ in range(200)])
        assert prof.classify(0, 10.0) == NORMAL
        assert prof.classify(0, 18.0) == SUSPICIOUS

    def test_single_sample_component_does_not_vouch(self):
        prof = feed(profile(n_min=5, theta=0.01), [10.0] * 50)
        prof.update(0, 500.0)  # spawns a fresh count-1 component
        assert prof.classify(0, 500.0) == SUSPICIOUS

    def test_non_finite_rejected(self):
        prof = profile()
        with pytest.raises(ValueError):
            prof.update(0, math.nan)
        with pytest.raises(ValueError):
            prof.probability(0, math.inf)


class TestMixtureShape:
    def test_dominant_component_from_unimodal_stream(self):
        rng = random.Random(1)
        prof = feed(profile(), [rng.gauss(10.0, 1.0) for _ in range(1000)])
        comps = sorted(prof.slots[0].components, key=lambda c: -c.count)
        dom = comps[0]
        assert dom.count >= 900
        assert abs(dom.mean - 10.0) <= 0.15
        assert abs(dom.variance(1e-6) - 1.0) <= 0.3

    def test_bimodal_splits_cleanly(self):
        rng = random.Random(9)
        values = []
        for _ in range(500):
            values.append(rng.gauss(0.0, 1.0))
            values.append(rng.gauss(50.0, 1.0))
        prof = feed(profile(), values)
        comps = sorted(prof.slots[0].components, key=lambda c: c.mean)
        big = [c for c in comps if c.count >= 100]
        assert len(big) == 2
        lo, hi = big
        assert abs(lo.mean - 0.0) <= 0.3 and abs(hi.mean - 50.0) <= 0.3
        assert 0.4 <= lo.count / (lo.count + hi.count) <= 0.6

    def test_k_max_bounds_components(self):
        rng = random.Random(3)
        prof = profile(k_max=3)
        feed(prof, [rng.uniform(0, 1000) for _ in range(300)])
        assert len(prof.slots[0].components) <= 3

    def test_expected_value_weighted(self):
        prof = profile(n_min=2, k_max=2)
        feed(prof, [0.0] * 30 + [100.0] * 10)
        # consolidation keeps the modes apart; weights 3:1
        assert prof.expected_value(0) == pytest.approx(25.0, abs=1.0)


class TestSerialization:
    def test_round_trip(self):
        rng = random.Random(12)
        cfg = ProfilerConfig(slot_count=4)
        prof = MixtureProfile(cfg)
        for _ in range(300):
            prof.update(rng.randrange(4), rng.gauss(5.0, 2.0))
        again = MixtureProfile.from_bytes(prof.to_bytes(), cfg)
        for a, b in zip(prof.slots, again.slots):
            assert a.seen == b.seen
            assert [(c.count, c.mean, c.m2) for c in a.components] == \
                   [(c.count, c.mean, c.m2) for c in b.components]

    def test_slot_count_mismatch_rejected(self):
        prof = MixtureProfile(ProfilerConfig(slot_count=2))
        with pytest.raises(ValueError):
            MixtureProfile.from_bytes(prof.to_bytes(),
                                      ProfilerConfig(slot_count=3))

    def test_copy_is_independent(self):
        prof = feed(profile(n_min=1), [1.0, 2.0, 3.0])
        clone = prof.copy()
        clone.update(0, 100.0)
        assert prof.slots[0].seen == 3
        assert clone.slots[0].seen == 4
