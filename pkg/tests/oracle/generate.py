"""Independent high-precision values frozen into the tests.

Run with ``python3 tests/oracle/generate.py``; uses only mpmath, never the package.
"""
import mpmath as mp

mp.mp.dps = 40


def heat_kernel(R, t, theta, tail=mp.mpf("1e-35")):
    R, t, theta = mp.mpf(R), mp.mpf(t), mp.mpf(theta)
    x = mp.cos(theta)
    total = mp.mpf(0)
    l = 0
    while True:
        term = (2 * l + 1) * mp.exp(-l * (l + 1) * t / (2 * R**2)) * mp.legendre(l, x) / (4 * mp.pi * R**2)
        total += term
        if l > 10 and (2 * l + 1) * mp.exp(-l * (l + 1) * t / (2 * R**2)) < tail:
            return total
        l += 1


KERNEL_CASES = [(1, 0.1, 0.0), (1, 0.1, 0.5), (1, 1.0, 2.0), (5, 2.5, 0.1), (20, 40.0, 1.0), (2, 0.5, 3.0)]
LEGENDRE_CASES = [(5, 0.3), (10, -0.7), (37, 0.91)]

if __name__ == "__main__":
    for R, t, th in KERNEL_CASES:
        print(f"({R}, {t}, {th}, {mp.nstr(heat_kernel(R, t, th), 20)}),")
    for l, x in LEGENDRE_CASES:
        print(f"({l}, {x}, {mp.nstr(mp.legendre(l, x), 20)}),")
