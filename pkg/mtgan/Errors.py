__author__ = 'frank'


class MtganError(Exception):
    pass


class ConfigError(MtganError, ValueError):
    pass


class ShapeError(MtganError, ValueError):
    pass


class AudioFormatError(MtganError, ValueError):
    pass


class ContainerError(MtganError):
    """
    Raised for corrupt or truncated container files.

    :param message: What went wrong.
    :param offset: Byte offset where parsing stopped.
    """

    def __init__(self, message, offset):
        super(ContainerError, self).__init__('%s at offset %d' % (message, offset))
        self.offset = offset


class CheckpointError(MtganError):
    pass


class NonFiniteLossError(MtganError):
    """
    Raised when a loss component turns NaN or Inf. Any update the step already made is rolled back.

    :param component: Loss component name, e.g. ``L_D``.
    :param step: Training step at which the value appeared.
    :param checkpoint: Path of the last good checkpoint, if any was written.
    """

    def __init__(self, component, step=None, checkpoint=None):
        message = 'Non-Finite Loss: %s' % component
        if step is not None:
            message += ' at step %d' % step
        if checkpoint:
            message += ' (last good checkpoint: %s)' % checkpoint

        super(NonFiniteLossError, self).__init__(message)
        self.component = component
        self.step = step
        self.checkpoint = checkpoint
