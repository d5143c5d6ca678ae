"""Per-sequence manifest shared by the dataset parsers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from viogeom.stereo import StereoRig

NS_PER_S = 1_000_000_000


@dataclass
class SequenceManifest:
    """Frame index of one stereo sequence.

    All per-frame lists have equal length; timestamps are integer
    nanoseconds and strictly increasing. Entries for files a layout does
    not provide are ``None`` (e.g. disparity for sequences without it).
    ``ground_truth`` is a ``viogeom.evaluate.Trajectory`` or ``None``.
    """

    frame_t_ns: list
    left_image_paths: list
    right_image_paths: list
    disparity_paths: list
    rig: StereoRig
    ground_truth: object = None
    sequence: str = ""

    def __post_init__(self):
        n = len(self.frame_t_ns)
        for name in ("left_image_paths", "right_image_paths", "disparity_paths"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length {len(getattr(self, name))} != frame count {n}")
        t = np.asarray(self.frame_t_ns, dtype=np.int64)
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("frame timestamps must be strictly increasing")

    def __len__(self):
        return len(self.frame_t_ns)

    def frame_times(self):
        """Frame timestamps in float seconds."""
        return np.asarray(self.frame_t_ns, dtype=np.int64) / NS_PER_S
