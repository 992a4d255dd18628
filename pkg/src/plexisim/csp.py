"""Constraint model over enumerated domains and a backtracking solver.

Variables take values from finite per-variable domains; a constraint is a
scope plus either an explicit relation (set of admissible scope tuples) or
a predicate over the scope assignment. High-order scopes are supported.
The solver runs depth-first backtracking with forward checking, visiting
variables in lexicographic id order and values in domain list order, so
results are fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional

from .errors import ValidationError


@dataclass(frozen=True)
class Constraint:
    """Scope plus relation: explicit admissible tuples or a predicate."""

    scope: tuple
    predicate: Optional[Callable[[Mapping[str, Any]], bool]] = None
    allowed: Optional[frozenset] = None
    name: str = ""

    def __post_init__(self):
        if (self.predicate is None) == (self.allowed is None):
            raise ValidationError("constraint needs exactly one of predicate/allowed")

    def holds(self, assignment: Mapping[str, Any]) -> bool:
        """Evaluate on an assignment covering the whole scope."""
        if self.allowed is not None:
            return tuple(assignment[v] for v in self.scope) in self.allowed
        return bool(self.predicate({v: assignment[v] for v in self.scope}))


@dataclass
class CspInstance:
    variables: list
    domains: dict           # variable -> list of values, in value order
    constraints: list = field(default_factory=list)

    def validate(self) -> None:
        vars_set = set(self.variables)
        if len(vars_set) != len(self.variables):
            raise ValidationError("duplicate variables")
        for v in self.variables:
            if v not in self.domains:
                raise ValidationError(f"variable {v!r} has no domain")
        for c in self.constraints:
            if not set(c.scope) <= vars_set:
                raise ValidationError(f"constraint scope {c.scope} outside variables")


def check_assignment(inst: CspInstance, assignment: Mapping[str, Any]) -> bool:
    """Direct evaluation: total, in-domain, and no constraint violated."""
    for v in inst.variables:
        if v not in assignment:
            return False
        if assignment[v] not in inst.domains[v]:
            return False
    return all(c.holds(assignment) for c in inst.constraints)


def solve_csp(inst: CspInstance) -> Optional[dict]:
    """Return a satisfying total assignment, or None when none exists."""
    inst.validate()
    order = sorted(inst.variables, key=str)
    if not order:
        # Constraints with empty scopes still apply to the empty assignment.
        return {} if all(c.holds({}) for c in inst.constraints) else None

    domains = {v: list(inst.domains[v]) for v in order}
    if any(not domains[v] for v in order):
        return None

    constraints = list(inst.constraints)
    assignment: dict = {}

    def consistent_so_far(var) -> bool:
        # Check every constraint whose scope is now fully assigned.
        for c in constraints:
            if var in c.scope and all(u in assignment for u in c.scope):
                if not c.holds(assignment):
                    return False
        return True

    def forward_check(var) -> Optional[list]:
        """Prune domains of variables one assignment away from each scope.

        Returns (variable, previous domain) snapshots for undo, or None
        when some domain was wiped out. Snapshots preserve value order.
        """
        snapshots: list = []
        for c in constraints:
            if var not in c.scope:
                continue
            unassigned = [u for u in c.scope if u not in assignment]
            if len(unassigned) != 1:
                continue
            u = unassigned[0]
            keep = []
            for w in domains[u]:
                assignment[u] = w
                ok = c.holds(assignment)
                del assignment[u]
                if ok:
                    keep.append(w)
            if len(keep) != len(domains[u]):
                snapshots.append((u, domains[u]))
                domains[u] = keep
            if not keep:
                for uu, old in reversed(snapshots):
                    domains[uu] = old
                return None
        return snapshots

    def backtrack(i: int) -> bool:
        if i == len(order):
            return all(c.holds(assignment) for c in constraints)
        var = order[i]
        for value in list(domains[var]):
            assignment[var] = value
            if consistent_so_far(var):
                snapshots = forward_check(var)
                if snapshots is not None:
                    if backtrack(i + 1):
                        return True
                    for u, old in reversed(snapshots):
                        domains[u] = old
            del assignment[var]
        return False

    if backtrack(0):
        return dict(assignment)
    return None
