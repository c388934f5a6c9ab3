"""Independent closed-form references for the policy families.

Each evaluator here recomputes the curve with different algebra than the
library: integer phase reduction instead of the floor/abs carrier,
square-and-multiply instead of **, half-angle and log identities for the
smooth decays. A shared algebraic mistake cannot cancel out.

SWEEP_CASES picks parameters where both forms are well-conditioned up to
t = 10^5: cyclic half-cycles are long enough that the carrier's phase
subtraction keeps ~4 extra decimal digits, and decay exponents stay well
inside the normal float range. Tiny l at huge t is a float-precision
corner, not a correctness question; targeted small-t tests cover it.
"""

from __future__ import annotations

import math

from lrforge.schedule import (
    Composite,
    CosineDecay,
    Exp,
    Fix,
    LinearDecay,
    NStep,
    Poly,
    Scaled,
    Segment,
    Sin,
    Sin2,
    SinExp,
    Step,
    Tri,
    Tri2,
    TriExp,
    Warmup,
)


def ipow(base: float, n: int) -> float:
    """Square-and-multiply integer power, deliberately not ** or math.pow."""
    if n < 0:
        raise ValueError("negative exponent")
    acc = 1.0
    while n:
        if n & 1:
            acc *= base
        base *= base
        n >>= 1
    return acc


def _tri_shape(t: int, l: int) -> float:
    # integer phase reduction; exact until the single final division
    r = t % (2 * l)
    return (r if r <= l else 2 * l - r) / l


def _sin_shape(t: int, l: int) -> float:
    r = t % (2 * l)
    return math.sin(math.pi * r / (2 * l))


def _cycle(t: int, l: int) -> int:
    return 1 + t // (2 * l)


def ref_lr(policy, t: int) -> float:
    """Evaluate a policy at iteration t, independently of the library."""
    if isinstance(policy, Scaled):
        return policy.lam * ref_lr(policy.base, t)
    if isinstance(policy, Fix):
        return policy.k
    if isinstance(policy, Step):
        return policy.k * ipow(policy.gamma, t // policy.l)
    if isinstance(policy, NStep):
        hit = sum(1 for m in policy.milestones if m <= t)
        return policy.k * ipow(policy.gamma, hit)
    if isinstance(policy, Exp):
        return policy.k * math.exp((t / policy.l) * math.log(policy.gamma))
    if isinstance(policy, Poly):
        if t == policy.t_max:
            return 0.0
        return policy.k * math.exp(policy.p * math.log1p(-t / policy.t_max))
    if isinstance(policy, Tri):
        return policy.k0 + (policy.k1 - policy.k0) * _tri_shape(t, policy.l)
    if isinstance(policy, Tri2):
        amp = math.ldexp(_tri_shape(t, policy.l), -(_cycle(t, policy.l) - 1))
        return policy.k0 + (policy.k1 - policy.k0) * amp
    if isinstance(policy, TriExp):
        amp = _tri_shape(t, policy.l) * ipow(policy.gamma, t)
        return policy.k0 + (policy.k1 - policy.k0) * amp
    if isinstance(policy, Sin):
        return policy.k0 + (policy.k1 - policy.k0) * _sin_shape(t, policy.l)
    if isinstance(policy, Sin2):
        amp = math.ldexp(_sin_shape(t, policy.l), -(_cycle(t, policy.l) - 1))
        return policy.k0 + (policy.k1 - policy.k0) * amp
    if isinstance(policy, SinExp):
        amp = _sin_shape(t, policy.l) * ipow(policy.gamma, t)
        return policy.k0 + (policy.k1 - policy.k0) * amp
    if isinstance(policy, CosineDecay):
        c = math.cos(math.pi * t / (2 * policy.t_max))  # half-angle form
        return policy.k_min + (policy.k - policy.k_min) * c * c
    if isinstance(policy, LinearDecay):
        tau = t / policy.t_max
        return policy.k * (1 - tau) + policy.k_min * tau
    if isinstance(policy, Warmup):
        if policy.w >= 1:
            w = int(policy.w)
        elif policy.w == 0:
            w = 0
        else:
            w = int(policy.w * _ref_horizon(policy.inner))
        if t < w:
            return (t * ref_lr(policy.inner, 0)) / w
        return ref_lr(policy.inner, t - w)
    if isinstance(policy, Composite):
        for seg in policy.segments:  # linear scan, not bisection
            if seg.start <= t < seg.end:
                return ref_lr(seg.policy, t - seg.start)
        raise ValueError(f"t={t} past the last segment")
    raise TypeError(f"no reference for {type(policy).__name__}")


def _ref_horizon(policy) -> int:
    if isinstance(policy, (Poly, CosineDecay, LinearDecay)):
        return policy.t_max
    if isinstance(policy, Composite):
        return policy.segments[-1].end - 1
    raise TypeError(f"no bounded horizon for {type(policy).__name__}")


T_MAX_SWEEP = 10**5

# family name -> a representative, well-conditioned policy for the big sweep
SWEEP_CASES = {
    "FIX": Fix(k=0.05),
    "STEP": Step(k=0.1, gamma=0.92, l=4000),
    "NSTEP": NStep(k=0.1, gamma=0.31, milestones=(11, 5000, 32000, 48000, 90001)),
    "EXP": Exp(k=0.2, gamma=0.999, l=64),
    "POLY": Poly(k=0.1, p=2.0, t_max=T_MAX_SWEEP),
    "TRI": Tri(k0=0.01, k1=0.11, l=5000),
    "TRI2": Tri2(k0=0.01, k1=0.11, l=5000),
    "TRIEXP": TriExp(k0=0.01, k1=0.11, l=5000, gamma=0.99993),
    "SIN": Sin(k0=0.01, k1=0.11, l=5000),
    "SIN2": Sin2(k0=0.01, k1=0.11, l=5000),
    "SINEXP": SinExp(k0=0.01, k1=0.11, l=5000, gamma=0.99993),
    "COSINE": CosineDecay(k=0.1, t_max=T_MAX_SWEEP, k_min=0.001),
    "LINEAR": LinearDecay(k=0.1, t_max=T_MAX_SWEEP, k_min=0.001),
    "WARMUP": Warmup(w=0.05, inner=CosineDecay(k=0.1, t_max=T_MAX_SWEEP, k_min=0.001)),
}

# not one of the 14 formula families, but the same oracle applies
MULTI_SWEEP_CASE = Composite(segments=(
    Segment(start=0, end=30000, policy=Tri(k0=0.1, k1=0.5, l=1500)),
    Segment(start=30000, end=60000, policy=Tri(k0=0.01, k1=0.05, l=1000)),
    Segment(start=60000, end=100001, policy=Step(k=0.01, gamma=0.5, l=8000)),
))


def rel_err(a: float, b: float) -> float:
    if a == b:
        return 0.0
    return abs(a - b) / max(abs(a), abs(b))
