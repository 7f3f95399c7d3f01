class PagetError(Exception):
    """Base class of all errors raised by the aggregation pipeline and its tools.
    The command line maps these to exit code 2 (data error).
    """


class ConfigError(PagetError):
    """Invalid steering file entry or command line value."""


class UnknownClassError(PagetError, KeyError):
    """Class name or id outside the taxonomy vocabulary."""

    def __init__(self,
                 name,
                 vocabulary):
        """Set fields.
        :param name: offending name or id
        :param vocabulary: list of accepted canonical names
        """
        self.name = name
        self.vocabulary = list(vocabulary)
        super().__init__(f"unknown class {name!r}; vocabulary: {', '.join(self.vocabulary)}")

    def __str__(self):
        return self.args[0]


class RasterShapeError(PagetError, ValueError):
    """Rasters that have to be aligned differ in their dimensions."""


class MissingChannelError(PagetError):
    """A logit stack lacks a channel required by an operation."""


class ContainerError(PagetError):
    """Malformed TMEF1 container (magic, dtype, payload length, non-finite values)."""


class FixtureError(PagetError):
    """Invalid synthetic scene description."""


class DegenerateInputError(PagetError, ValueError):
    """Input violates a statistical precondition, e.g. empty samples or all-zero areas."""
