"""Numerical toolkit for semiclassical states on model isotropic submanifolds.

Submodules
----------
grid        periodic grids, unitary semiclassical Fourier transform, Husimi maps
states      model states hbar^r a(t, u/sqrt(hbar)), profiles, norm estimates
quantize    Kohn-Nirenberg quantization of symbols p0 + hbar p1
symbolcalc  predicted symbols at orders 0, 1/2, 1 and convergence harnesses
metaplectic symplectic generator words and their quantized action on profiles
fio         elementary Fourier integral operators preserving the model class
dynamics    Hamiltonian flows, Gaussian propagation, split-step reference
quasimode   pseudospectrum quasimode construction
cli         experiment runner (JSON config in, JSON/CSV reports out)
"""

__version__ = "0.1.0"
