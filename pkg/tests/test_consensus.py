"""Utility smoothing, geometric-mean consensus, and normalization."""

from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

from codesign.consensus import (
    ConsensusReport,
    PreferenceTally,
    consensus,
    report_to_json_dict,
    tally,
    upu,
)
from codesign.design_space import CANONICAL_SPACE, AttributeId, DesignVector
from codesign.elicitation import (
    BrushRegion,
    InteractionKind,
    InteractionRecord,
    Polarity,
)

REGION = BrushRegion(0, 0, 4, 4, 16, 16)


def brush(user, item, polarity, dims, rid="r1"):
    return InteractionRecord(
        record_id=rid, user_id=user, item_id=item, kind=InteractionKind.BRUSH,
        polarity=polarity, round_index=0, region=REGION,
        confirmed_dimensions=tuple(dims),
    )


def vote(user, item, polarity, rid="r1"):
    return InteractionRecord(
        record_id=rid, user_id=user, item_id=item,
        kind=InteractionKind.OVERALL_VOTE, polarity=polarity, round_index=0,
    )


class TestUpu:
    def test_uninformative_prior(self):
        assert upu(0, 0) == 0.5

    def test_hand_arithmetic(self):
        assert upu(3, 1) == pytest.approx(4 / 6, abs=1e-15)
        assert upu(0, 8) == pytest.approx(0.1, abs=1e-15)

    def test_matches_exact_rationals(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            l, d = int(rng.integers(0, 100)), int(rng.integers(0, 100))
            exact = Fraction(l + 1, l + d + 2)
            assert abs(upu(l, d) - float(exact)) < 1e-12

    def test_bounds_and_monotonicity(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            l, d = int(rng.integers(0, 50)), int(rng.integers(0, 50))
            v = upu(l, d)
            assert 0.0 < v < 1.0
            assert upu(l + 1, d) > v
            assert upu(l, d + 1) < v


class TestTally:
    VEC = DesignVector.from_names(
        ["Shirt", "Long", "V", "Breasted", "Pure", "Focus", "Cotton",
         "Monochromatic", "Blue"]
    )
    VECTORS = {"g1": VEC.attribute_indices}

    def test_empty_log_gives_zero_counts(self):
        t = tally([], self.VECTORS)
        assert t.counts == {}
        assert t.get("u", AttributeId(0, 0)) == (0, 0)

    def test_single_like_brush_on_collar(self):
        rec = brush("u1", "g1", Polarity.LIKE, [2])  # Collar Shape dimension
        t = tally([rec], self.VECTORS)
        v_attr = CANONICAL_SPACE.attribute_id("Collar Shape", "V")
        assert t.get("u1", v_attr) == (1, 0)
        assert len(t.counts) == 1

    def test_brush_with_two_dimensions_increments_two_counters(self):
        rec = brush("u1", "g1", Polarity.DISLIKE, [1, 6])
        t = tally([rec], self.VECTORS)
        assert len(t.counts) == 2
        long_attr = CANONICAL_SPACE.attribute_id("Sleeve Length", "Long")
        cotton = CANONICAL_SPACE.attribute_id("Material", "Cotton")
        assert t.get("u1", long_attr) == (0, 1)
        assert t.get("u1", cotton) == (0, 1)

    def test_votes_do_not_touch_tallies(self):
        t = tally([vote("u1", "g1", Polarity.LIKE)], self.VECTORS)
        assert t.counts == {}

    def test_empty_confirmations_contribute_nothing(self):
        t = tally([brush("u1", "g1", Polarity.LIKE, [])], self.VECTORS)
        assert t.counts == {}

    def test_unknown_item_skipped_with_count(self):
        t = tally([brush("u1", "ghost", Polarity.LIKE, [0])], self.VECTORS)
        assert t.counts == {}
        assert t.skipped_unknown_items == 1


class TestConsensus:
    def test_prior_only_population(self):
        report = consensus(PreferenceTally(), ["u1", "u2", "u3"])
        for key, raw in report.acs_raw.items():
            assert raw == pytest.approx(0.5, abs=1e-12)
            assert report.acs_norm[key] == 0.5  # constant-dimension rule

    def test_two_user_geometric_mean(self):
        # UPU 0.8 = (3+1)/(3+0+2); UPU 0.2 = (0+1)/(0+3+2).
        t = PreferenceTally()
        a = AttributeId(2, 2)
        t.counts[("u1", a.as_tuple())] = (3, 0)
        t.counts[("u2", a.as_tuple())] = (0, 3)
        report = consensus(t, ["u1", "u2"])
        assert report.upu_table["u1"][a.as_tuple()] == pytest.approx(0.8)
        assert report.upu_table["u2"][a.as_tuple()] == pytest.approx(0.2)
        assert report.acs_raw[a.as_tuple()] == pytest.approx(np.sqrt(0.16), abs=1e-12)

    def test_single_user_equals_upu(self):
        t = PreferenceTally()
        a = AttributeId(4, 1)
        t.counts[("solo", a.as_tuple())] = (5, 2)
        report = consensus(t, ["solo"])
        assert report.acs_raw[a.as_tuple()] == pytest.approx(upu(5, 2), rel=1e-12)

    def test_log_space_matches_direct_product(self):
        rng = np.random.default_rng(12)
        for n in range(1, 9):
            users = [f"u{i}" for i in range(n)]
            t = PreferenceTally()
            a = AttributeId(6, 3)
            utilities = []
            for u in users:
                l, d = int(rng.integers(0, 30)), int(rng.integers(0, 30))
                t.counts[(u, a.as_tuple())] = (l, d)
                utilities.append(upu(l, d))
            report = consensus(t, users)
            direct = float(np.prod(utilities) ** (1.0 / n))
            got = report.acs_raw[a.as_tuple()]
            assert abs(got - direct) / direct < 1e-12

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        users = [f"u{i}" for i in range(5)]
        t = PreferenceTally()
        for u in users:
            for key in [(0, 1), (3, 2), (8, 8)]:
                t.counts[(u, key)] = (int(rng.integers(0, 9)), int(rng.integers(0, 9)))
        fwd = consensus(t, users)
        rev = consensus(t, list(reversed(users)))
        assert fwd.acs_raw == rev.acs_raw

    def test_dominance(self):
        # u-wise >= with one strict > implies a strictly larger consensus.
        t = PreferenceTally()
        a, b = AttributeId(0, 1), AttributeId(0, 2)
        t.counts[("u1", a.as_tuple())] = (4, 0)   # 5/6
        t.counts[("u1", b.as_tuple())] = (4, 0)   # equal for u1
        t.counts[("u2", a.as_tuple())] = (3, 1)   # 4/6
        t.counts[("u2", b.as_tuple())] = (1, 3)   # 2/6 strictly lower
        report = consensus(t, ["u1", "u2"])
        assert report.acs_raw[a.as_tuple()] > report.acs_raw[b.as_tuple()]

    def test_normalization_bounds_and_extremes(self):
        t = PreferenceTally()
        t.counts[("u1", (1, 0))] = (9, 0)
        t.counts[("u1", (1, 1))] = (0, 9)
        report = consensus(t, ["u1"])
        vals = {a: report.acs_norm[(1, a)] for a in range(3)}
        assert vals[0] == pytest.approx(0.99)
        assert vals[1] == pytest.approx(0.01)
        assert all(0.01 <= v <= 0.99 for v in vals.values())

    def test_idle_users_still_contribute_prior(self):
        t = PreferenceTally()
        a = AttributeId(2, 2)
        t.counts[("active", a.as_tuple())] = (8, 0)
        lone = consensus(t, ["active"]).acs_raw[a.as_tuple()]
        diluted = consensus(t, ["active", "idle"]).acs_raw[a.as_tuple()]
        assert diluted == pytest.approx(np.sqrt(lone * 0.5), rel=1e-12)


class TestReportSerialization:
    def test_canonical_key_order(self):
        report = consensus(PreferenceTally(), ["u1"])
        doc = report_to_json_dict(report)
        assert list(doc["acs_raw"].keys()) == [
            d.name for d in CANONICAL_SPACE.dimensions
        ]
        assert list(doc["acs_raw"]["Type"].keys()) == list(
            CANONICAL_SPACE.dimensions[0].attributes
        )
        assert doc["n"] == 1

    def test_byte_stable(self):
        import json

        t = PreferenceTally()
        t.counts[("u1", (0, 0))] = (2, 1)
        a = json.dumps(report_to_json_dict(consensus(t, ["u1"])), sort_keys=True)
        b = json.dumps(report_to_json_dict(consensus(t, ["u1"])), sort_keys=True)
        assert a == b
