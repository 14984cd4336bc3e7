"""Space-time wavelet Petrov-Galerkin methods for parabolic problems."""
