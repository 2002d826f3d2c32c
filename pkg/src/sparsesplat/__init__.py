"""Feed-forward Gaussian splatting from sparse views, on numpy.

Subpackages and modules:

- ``numerics``: activations, layers, sampling and gradient checking
- ``geometry``: pinhole cameras, plane-sweep candidates, epipolar sampling
- ``encoder``: per-view features, cross-view attention, monocular priors
- ``matching``: coarse correlation and the deformable refinement block
- ``refine``: full-resolution depth refinement
- ``gaussians``: per-pixel Gaussian prediction and PLY IO
- ``rasterizer``: tiled CPU splatting with analytic gradients
- ``harness``: scenes, inference, fitting, metrics and the CLI
"""

__version__ = "0.1.0"
