"""Exception types shared across the package.

Every error that a pipeline stage can surface to the CLI derives from
``UowlocError`` so the front end can report the failing stage by name.
"""


class UowlocError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(UowlocError):
    """Invalid or unknown configuration key, section, or value."""


class DisconnectedGraphError(UowlocError):
    """The observation graph splits into multiple components.

    Positions are only determined per connected component, so the solver
    refuses to run. ``components`` lists the node sets found.
    """

    def __init__(self, components):
        self.components = [sorted(c) for c in components]
        preview = "; ".join(str(c) for c in self.components[:4])
        if len(self.components) > 4:
            preview += "; ..."
        super().__init__(
            f"observation graph is disconnected "
            f"({len(self.components)} components: {preview})"
        )


class DegenerateAnchorsError(UowlocError):
    """Anchor set cannot pin down a 3D similarity transform."""


class SingularGeometryError(UowlocError):
    """Fisher information matrix is singular for some node geometry."""
