"""Global wave-propagator parametrix toolkit.

Complex-phase oscillatory-integral propagators on closed Riemannian
manifolds, with Hamiltonian/null-geodesic flow machinery, transport-equation
symbol solvers, exact spectral oracles and Hadamard two-point diagnostics.
"""

__version__ = "0.1.0"
