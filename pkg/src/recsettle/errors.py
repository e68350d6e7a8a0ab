"""Exception hierarchy shared by every recsettle module."""


class RecSettleError(Exception):
    """Base class; ``category`` is the machine-readable tag used by the CLI."""

    category = "internal"


class InputError(RecSettleError):
    category = "input"


class SchemaError(InputError):
    """Tabular input does not have the expected shape (header, timestamps, members)."""

    category = "schema"


class ParseError(InputError):
    """A cell could not be parsed."""

    category = "parse"


class ConfigError(InputError):
    category = "config"


class DegenerateInputError(InputError):
    category = "degenerate"


class ContractError(RecSettleError):
    """A function was called with arguments violating its documented precondition."""

    category = "contract"


class ModelError(RecSettleError):
    """Invalid LP construction (bad bounds, unknown variables, empty rows...)."""

    category = "model"


class SolverError(RecSettleError):
    """The simplex could not finish (numerical breakdown, iteration limit)."""

    category = "solver"


class InfeasibleSettlement(RecSettleError):
    """No settlement satisfies every self-sufficiency floor.

    ``binding_members`` lists the members whose floors had to be relaxed in the
    elastic diagnostic solve, with the missing self-sufficiency points.
    """

    category = "infeasible"

    def __init__(self, message, binding_members=None):
        super().__init__(message)
        self.binding_members = dict(binding_members or {})


class OracleRefusal(RecSettleError):
    """The brute-force oracle refuses instances beyond its combinatorial guard."""

    category = "oracle"
