"""Adversarial robustness benchmark for camera-based 3D object detectors."""
