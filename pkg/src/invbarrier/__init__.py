"""Invariant barrier certificate synthesis for polynomial dynamical systems."""

from .pipeline import SynthConfig, SynthesisResult, encode_problem, synthesize
from .polyalg import DynamicalSystem, Polynomial, lie_derivative, parse_polynomial
from .problems import Problem, benchmark_names, load_benchmark, load_problem
from .verify import Certificate, CheckConfig, check_certificate

__version__ = "0.1.0"

__all__ = [
    "Certificate", "CheckConfig", "DynamicalSystem", "Polynomial", "Problem", "SynthConfig", "SynthesisResult",
    "benchmark_names", "check_certificate", "encode_problem", "lie_derivative", "load_benchmark", "load_problem",
    "parse_polynomial", "synthesize",
]
