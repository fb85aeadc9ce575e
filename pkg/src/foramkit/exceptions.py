"""Exception types raised across the toolkit."""


class ForamkitError(Exception):
    """Base class for every error raised by foramkit."""


class ConfigError(ForamkitError, ValueError):
    """A configuration value is outside its allowed domain."""


class MalformedMaskError(ForamkitError, ValueError):
    """Run lengths do not describe a width x height grid."""


class EmptyMaskError(ForamkitError, ValueError):
    """An operation needs at least one set pixel."""


class ManifestError(ForamkitError, ValueError):
    """Manifest or prediction file failed validation.

    ``image_id`` and ``object_id`` identify the offending record when known.
    """

    def __init__(self, message, image_id=None, object_id=None):
        parts = []
        if image_id is not None:
            parts.append(f"image_id={image_id!r}")
        if object_id is not None:
            parts.append(f"object_id={object_id!r}")
        prefix = f"[{', '.join(parts)}] " if parts else ""
        super().__init__(prefix + message)
        self.image_id = image_id
        self.object_id = object_id


class DuplicateIdError(ManifestError):
    pass


class UnknownImageError(ManifestError):
    pass


class PlacementError(ForamkitError, RuntimeError):
    """Synthetic scene objects could not be placed within the attempt budget."""
