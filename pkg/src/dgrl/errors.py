"""Exception types shared across the toolbox.

Every error raised on a contract violation derives from DGRLError so callers
(and the CLI exit-code mapping) can distinguish toolbox failures from bugs.
"""


class DGRLError(Exception):
    """Base class for all toolbox errors."""


# --- graph / dataset construction ---------------------------------------

class IndexOutOfRange(DGRLError):
    """An edge endpoint is outside [0, num_nodes)."""


class ShapeMismatch(DGRLError):
    """An array shape does not compose with its consumer."""


class ConflictingTargets(DGRLError):
    """Both node-level and graph-level targets were supplied."""


class InvalidSpec(DGRLError):
    """A generation / construction spec is out of its valid range."""


class ParseError(DGRLError):
    """A dataset file line is not valid JSON."""


class SchemaError(DGRLError):
    """A dataset record is missing or carries an unexpected field."""


class SplitError(DGRLError):
    """A graph (or node) lacks exactly one valid split tag."""


# --- dense linear algebra ------------------------------------------------

class NotSquare(DGRLError):
    """Operation requires a square matrix."""


class NotHermitian(DGRLError):
    """Matrix fails the Hermitian residual tolerance."""


class ConvergenceFailure(DGRLError):
    """Iterative solver exhausted its iteration budget."""


# --- autodiff -------------------------------------------------------------

class NonScalarRoot(DGRLError):
    """backward() was called on a non-scalar tensor."""


class MissingGrad(DGRLError):
    """A trainable parameter has no gradient at optimizer-step time."""


# --- positional encodings -------------------------------------------------

class InvalidPotential(DGRLError):
    """Magnetic potential q outside [0, 1)."""


# --- models / configs -----------------------------------------------------

class InvalidCombo(DGRLError):
    """A backbone x direction x PE combination the design space rejects."""


class ConfigError(DGRLError):
    """A run configuration failed validation; message names the field path."""


class NodeCapExceeded(ConfigError):
    """A graph exceeds a configured node cap (dense-PE or attention).

    Subclasses ConfigError so config validation surfaces it naturally, but the
    CLI maps it to the resource-cap exit code (4) rather than config error (2).
    """


# --- training / metrics / ranking ------------------------------------------

class DegenerateTarget(DGRLError):
    """r2 is undefined: the targets have zero variance (SST = 0)."""


class EmptyColumn(DGRLError):
    """A rank column has fewer than two participating methods."""


class AllTrialsFailed(DGRLError):
    """Every tuning trial raised; no objective values to rank."""
