"""mpp_verifier -- simulation and numeric verification of mixed Poisson processes"""
__version__ = "1.0.0"
