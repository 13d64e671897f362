"""Connectors that move run artifacts between the library and the file system.

The learning code stays pure (no I/O inside the algorithm modules); everything
written to or read from disk goes through this package:
- CSV traces with full float precision, so identical runs give identical bytes.
- gnuplot-ready whitespace tables mirroring the CSV traces.
- JSON manifests and abort bundles.
"""
