"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation is defined on."""


class EstimationError(RuntimeError):
    """A fit or estimate could not be produced from the data given.

    ``details`` carries the offending aggregate (a denominator, an
    iteration count, ...) so callers can report it.
    """

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details


class SchemaError(ValueError):
    """A tabular input violates its file schema."""

    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.row = row
        self.column = column
