"""Communication-based SLAM pipeline: scenario config, dataset generation,
the per-step mapping/localization loop, invariant checks and file formats.

Entry point: ``python -m slam.main``.
"""
