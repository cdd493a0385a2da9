"""Real-time panorama stitching: L-ORB features, multi-probe LSH matching,
PROSAC homographies, multi-band blending and a stage-pipelined frame executor."""

__version__ = "0.1.0"
