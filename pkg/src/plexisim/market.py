"""Bid aggregation and market clearing for flexibility requests.

Bids are accepted whole (no partial fills). Clearing selects the subset of
bids that covers the requested quantity at the lowest total cost, where a
bid's cost is its per-kW price times its full offered quantity. Instances
up to ``EXACT_LIMIT`` bids are solved exactly by branch and bound; larger
ones fall back to a cheapest-price-first greedy pass with redundancy
removal. Equal-cost covers tie-break on the lexicographic bid id tuple.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import ValidationError

EXACT_LIMIT = 20


@dataclass(frozen=True)
class Bid:
    bid_id: str
    prosumer_id: str
    offered_kw: float
    price_per_kw: float
    resource_ids: tuple = ()

    def __post_init__(self):
        if self.offered_kw <= 0:
            raise ValidationError(f"bid {self.bid_id}: offered_kw must be positive")
        if self.price_per_kw < 0:
            raise ValidationError(f"bid {self.bid_id}: price must be non-negative")

    @property
    def cost(self) -> float:
        return self.offered_kw * self.price_per_kw


@dataclass(frozen=True)
class MarketResult:
    selected: tuple
    total_cost: float
    total_kw: float

    @property
    def bid_ids(self) -> tuple:
        return tuple(b.bid_id for b in self.selected)


def clear_market(bids: Sequence[Bid], quantity_kw: float) -> Optional[MarketResult]:
    """Pick the cheapest whole-bid cover of ``quantity_kw``; None if unsat."""
    if quantity_kw <= 0:
        raise ValidationError("requested quantity must be positive")
    pool = sorted(bids, key=lambda b: b.bid_id)
    if len({b.bid_id for b in pool}) != len(pool):
        raise ValidationError("duplicate bid ids")
    if sum(b.offered_kw for b in pool) < quantity_kw:
        return None
    if len(pool) <= EXACT_LIMIT:
        chosen = _solve_exact(pool, quantity_kw)
    else:
        chosen = _solve_greedy(pool, quantity_kw)
    if chosen is None:
        return None
    return MarketResult(
        selected=tuple(chosen),
        total_cost=sum(b.cost for b in chosen),
        total_kw=sum(b.offered_kw for b in chosen),
    )


def _solve_exact(pool: list, quantity_kw: float) -> Optional[list]:
    n = len(pool)
    suffix_kw = [0.0] * (n + 1)
    for i in range(n - 1, -1, -1):
        suffix_kw[i] = suffix_kw[i + 1] + pool[i].offered_kw

    best: list = []  # [cost, id_tuple, bids]

    def consider(cost: float, chosen: list) -> None:
        key = (cost, tuple(b.bid_id for b in chosen))
        if not best or key < (best[0], best[1]):
            best[:] = [key[0], key[1], list(chosen)]

    def descend(i: int, kw: float, cost: float, chosen: list) -> None:
        if kw >= quantity_kw:
            consider(cost, chosen)
            return
        if i == n or kw + suffix_kw[i] < quantity_kw:
            return
        # Prices are non-negative, so cost only grows down this branch.
        if best and cost > best[0]:
            return
        chosen.append(pool[i])
        descend(i + 1, kw + pool[i].offered_kw, cost + pool[i].cost, chosen)
        chosen.pop()
        descend(i + 1, kw, cost, chosen)

    descend(0, 0.0, 0.0, [])
    return best[2] if best else None


def _solve_greedy(pool: list, quantity_kw: float) -> Optional[list]:
    ordered = sorted(pool, key=lambda b: (b.price_per_kw, b.bid_id))
    chosen: list = []
    kw = 0.0
    for bid in ordered:
        chosen.append(bid)
        kw += bid.offered_kw
        if kw >= quantity_kw:
            break
    if kw < quantity_kw:
        return None
    # Drop bids that the cover no longer needs, costliest first.
    for bid in sorted(chosen, key=lambda b: (-b.cost, b.bid_id)):
        if kw - bid.offered_kw >= quantity_kw:
            chosen.remove(bid)
            kw -= bid.offered_kw
    return sorted(chosen, key=lambda b: b.bid_id)
