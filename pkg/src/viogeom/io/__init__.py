"""Dataset parsers and file-format readers/writers."""

from viogeom.io.manifest import SequenceManifest

__all__ = ["SequenceManifest"]
