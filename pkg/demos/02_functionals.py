"""Covariance functionals: polar quadrature against the spectral series, and one ledger slice.

Run:  python3 demos/02_functionals.py      (about a minute)
"""
import math

from sphere_she.functionals import f_e, f_e_ball, f_e_complement, f_e_spectral, functional_ledger
from sphere_she.noise import CovarianceKernel, NoiseConstants

R, t, alpha = math.e**2, 1.0, 1.0
C = NoiseConstants(0.5, 1.0)
kernel = CovarianceKernel("exponential_geodesic", R, C, {"kappa": 2.0})

polar = f_e(alpha, R, t, kernel)
print(f"whole sphere: polar {polar.value:.10f} (+- {polar.estimated_error:.1e}), spectral {f_e_spectral(alpha, R, t, kernel, L=2000):.10f}")
print(f"upper bound h_up / (2 alpha) = {kernel.h_up / (2 * alpha):.6f}")

beta = math.sqrt(math.log(R))
ball = f_e_ball(beta, alpha, R, t, kernel).value
comp = f_e_complement(beta, alpha, R, t, kernel).value
print(f"ball {ball:.6f} + complement {comp:.6f} = {ball + comp:.6f} <= whole {polar.value:.6f}")

led = functional_ledger({"exponential": lambda r: CovarianceKernel("exponential_geodesic", r, C, {"kappa": 2.0})},
                        alphas=(1.0,), betas=(1.0,), ts=(1.0,), Rs=(R,))
for row in led["rows"]:
    print(f"  {row['lemma']:22s} lhs {row['lhs']:.4e}  rhs {row['rhs']:.4e}  {'ok' if row['pass'] else 'VIOLATED'}")
