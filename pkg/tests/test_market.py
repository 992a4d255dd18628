import itertools
import random

import pytest

from plexisim.errors import ValidationError
from plexisim.market import Bid, clear_market


def brute_force(bids, quantity):
    """Enumerate every subset; the cheapest cover or None."""
    best = None
    for r in range(len(bids) + 1):
        for combo in itertools.combinations(bids, r):
            if sum(b.offered_kw for b in combo) >= quantity:
                cost = sum(b.offered_kw * b.price_per_kw for b in combo)
                if best is None or cost < best:
                    best = cost
    return best


class TestExamples:
    def test_three_bid_example(self):
        # Covering subsets of q=10: {A,B}=28, {C}=60, supersets cost more.
        bids = [Bid("A", "pa", 6, 3), Bid("B", "pb", 5, 2), Bid("C", "pc", 10, 6)]
        assert brute_force(bids, 10) == 28
        result = clear_market(bids, 10)
        assert result.bid_ids == ("A", "B")
        assert result.total_cost == 28

    def test_forced_single_zero_price(self):
        result = clear_market([Bid("only", "p", 1, 0)], 1)
        assert result.bid_ids == ("only",) and result.total_cost == 0

    def test_insufficient_supply_unsat(self):
        bids = [Bid("A", "pa", 5, 1), Bid("B", "pb", 3, 1)]
        assert clear_market(bids, 10) is None

    def test_tie_break_lexicographic(self):
        # Two equal-cost covers; the lexicographically smaller id set wins.
        bids = [Bid("a", "p", 10, 1), Bid("b", "p", 10, 1)]
        assert clear_market(bids, 10).bid_ids == ("a",)

    def test_zero_quantity_rejected(self):
        with pytest.raises(ValidationError):
            clear_market([Bid("A", "p", 1, 1)], 0)

    def test_duplicate_bid_ids_rejected(self):
        with pytest.raises(ValidationError):
            clear_market([Bid("A", "p", 1, 1), Bid("A", "q", 2, 2)], 1)

    def test_bid_invariants(self):
        with pytest.raises(ValidationError):
            Bid("A", "p", 0, 1)
        with pytest.raises(ValidationError):
            Bid("A", "p", 1, -0.5)


class TestOracleAgreement:
    def test_exact_matches_brute_force(self):
        rng = random.Random(3)
        sat = unsat = 0
        for _ in range(60):
            n = rng.randint(1, 12)
            bids = [
                Bid(f"b{i:02d}", f"p{i}", rng.randint(1, 10),
                    round(rng.uniform(0, 5), 2))
                for i in range(n)
            ]
            q = round(rng.uniform(0.3, 1.15) * sum(b.offered_kw for b in bids), 1)
            q = max(q, 0.5)
            expected = brute_force(bids, q)
            got = clear_market(bids, q)
            if expected is None:
                assert got is None
                unsat += 1
            else:
                assert got is not None
                assert got.total_cost == pytest.approx(expected, abs=1e-9)
                assert got.total_kw >= q
                sat += 1
        assert sat > 0 and unsat > 0


class TestGreedy:
    def test_large_pool_uses_greedy_and_covers(self):
        rng = random.Random(9)
        bids = [
            Bid(f"g{i:02d}", f"p{i}", rng.randint(1, 8), round(rng.uniform(0.1, 4), 2))
            for i in range(30)
        ]
        q = 0.6 * sum(b.offered_kw for b in bids)
        result = clear_market(bids, q)
        assert result is not None
        assert result.total_kw >= q
        # No selected bid is redundant.
        for b in result.selected:
            assert result.total_kw - b.offered_kw < q

    def test_large_pool_unsat(self):
        bids = [Bid(f"g{i:02d}", "p", 1, 1) for i in range(25)]
        assert clear_market(bids, 26) is None
