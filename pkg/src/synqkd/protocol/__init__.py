"""Frame-based key transfer: frames, sifting, retention, capacity and wire format."""

from .frames import (
    FRAME_BITS,
    CapacityModel,
    CapacityQueue,
    DetectionReport,
    Frame,
    FrameCompletion,
    ProtocolError,
    QberResult,
    SiftedBuffer,
    apply_capacity,
    compute_qber,
    frame_add,
    frame_before,
    generate_frame,
    reconcile_frames,
    sift_b92,
    sift_bb84,
)
from .peers import Alice, Bob

__all__ = [
    "FRAME_BITS",
    "Alice",
    "Bob",
    "CapacityModel",
    "CapacityQueue",
    "DetectionReport",
    "Frame",
    "FrameCompletion",
    "ProtocolError",
    "QberResult",
    "SiftedBuffer",
    "apply_capacity",
    "compute_qber",
    "frame_add",
    "frame_before",
    "generate_frame",
    "reconcile_frames",
    "sift_b92",
    "sift_bb84",
]
