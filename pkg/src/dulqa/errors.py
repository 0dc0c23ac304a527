class DulqaError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 1


class ContractError(DulqaError, ValueError):
    """Bad input shape, value or file content."""

    exit_code = 2


class SizeError(ContractError):
    pass


class DomainError(ContractError):
    pass


class FitDomainError(DomainError):
    pass


class DivergenceError(DulqaError, ArithmeticError):
    """A rollout produced a non-finite or runaway state."""

    exit_code = 3

    def __init__(self, step: int, item: int | None = None, detail: str = ""):
        self.step = step
        self.item = item
        where = f"step {step}" if item is None else f"step {step} (batch item {item})"
        super().__init__(f"rollout diverged at {where}{': ' + detail if detail else ''}")
