"""Exception types shared across the package."""


class FormatError(ValueError):
    """A file does not follow its documented format."""


class InsertionError(RuntimeError):
    """The insertion heuristic found no feasible position for a request."""

    def __init__(self, request_id: int, reasons: dict[int, str]):
        self.request_id = request_id
        self.reasons = reasons
        detail = "; ".join(f"vehicle {v}: {r}" for v, r in sorted(reasons.items())[:5])
        more = f" (+{len(reasons) - 5} more)" if len(reasons) > 5 else ""
        super().__init__(f"no feasible insertion for request {request_id}: {detail}{more}")


class FleetSizingError(RuntimeError):
    def __init__(self, unserved: list[int]):
        self.unserved = unserved
        super().__init__(f"insertion heuristic cannot serve requests {unserved} with the full candidate pool")


class SolverTimeout(RuntimeError):
    """The time limit expired before any solution was found."""


class InfeasibleAssignment(RuntimeError):
    """Some request cannot be covered, or the partition problem has no solution."""

    def __init__(self, message: str, requests: list[int] | None = None):
        self.requests = requests or []
        super().__init__(message)
