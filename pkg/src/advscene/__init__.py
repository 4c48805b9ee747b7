"""Adverse-scene KITTI toolkit."""
