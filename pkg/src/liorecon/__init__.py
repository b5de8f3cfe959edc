"""LiDAR-inertial odometry and TSDF surface reconstruction."""

__version__ = "0.1.0"
