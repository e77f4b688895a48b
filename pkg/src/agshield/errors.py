"""Exception types shared across the package."""


class AgshieldError(Exception):
    """Base class for all package errors."""


class TooLarge(AgshieldError):
    """An enumeration guard tripped (state or transition count over the limit)."""

    def __init__(self, what, size, guard):
        self.what = what
        self.size = size
        self.guard = guard
        super().__init__(f"{what} too large: {size} > guard {guard}")


class DeadEndCreated(AgshieldError):
    """Shield filtering emptied all actions of a state flagged as winning."""

    def __init__(self, state):
        self.state = state
        super().__init__(f"shielding created a dead end at state {state}")


class IncompatibleAt(AgshieldError):
    """Strategy composition has an empty intersection at some state."""

    def __init__(self, state):
        self.state = state
        super().__init__(f"strategies are incompatible at state {state}")


class EmptyWinningSet(AgshieldError):
    """No winning state exists for the requested safety game."""

    def __init__(self, agent=None):
        self.agent = agent
        if agent is None:
            super().__init__("winning set is empty")
        else:
            # agents are numbered from 1 in user-facing messages
            super().__init__(f"winning set is empty for agent {agent + 1}")


class CompatibilityFailure(AgshieldError):
    """A distributed shield composition does not exist at some state."""

    def __init__(self, state, agent):
        self.state = state
        self.agent = agent
        super().__init__(
            f"distributed shield incompatible at state {state} (agent {agent + 1})"
        )


class FormatError(AgshieldError):
    """A shield or policy file is malformed."""

    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class CyclicDependency(AgshieldError):
    """The dependency graph contains a cycle, listed in `cycle`."""

    def __init__(self, cycle):
        self.cycle = list(cycle)
        shown = " -> ".join(str(i + 1) for i in self.cycle)
        super().__init__(f"cyclic dependencies are incompatible: {shown}")


class DeclarationMismatch(AgshieldError):
    """Declared dependency edges disagree with the semantic oracle check."""


class NoAllowedAction(AgshieldError):
    """A shield hole was reached at runtime; indicates a synthesis bug."""

    def __init__(self, agent, obs):
        self.agent = agent
        self.obs = obs
        super().__init__(
            f"no allowed action for agent {agent + 1} at observation {obs}"
        )


class InitialNotWinning(AgshieldError):
    """An episode would start outside some agent's winning region."""

    def __init__(self, agent, obs):
        self.agent = agent
        self.obs = obs
        super().__init__(
            f"initial observation {obs} of agent {agent + 1} is not winning"
        )
