"""Two-stage refinement: frozen first pass plus a small Fourier corrector.

The first stage leaves a smooth oscillatory residual.  Its dominant
frequency sets the Fourier-feature scale of a second network, trained on
the residual of the composed field U1 + eps*U2 with the first stage held
constant and eps set to the first stage's residual scale.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import gnopt as G
from . import loss as LO
from . import tape as T
from .ansatz import FieldAnsatz, field_jets, q_to_y
from .errors import ConfigError, ContractError
from .net import NetworkSpec, init_params
from .sampling import build_batches, default_sampler, resample_stream
from .validate import standard_grid


def dominant_frequency(values: np.ndarray, span: float = 1.0) -> float:
    """Largest non-DC bin of the magnitude spectrum, in cycles per unit.

    ``values`` must be uniform samples over an interval of length
    ``span``.  A flat (white or empty) spectrum falls back to a quarter
    of the Nyquist frequency with a warning.
    """
    v = np.atleast_2d(np.asarray(values, dtype=float))
    n = v.shape[-1]
    if n < 256:
        raise ConfigError("dominant_frequency needs >= 256 uniform samples")
    mag = np.abs(np.fft.rfft(v, axis=-1))[:, 1:]
    peak = float(mag.max())
    med = float(np.median(mag))
    if peak == 0.0 or peak <= 6.0 * med:
        f_d = n / (8.0 * span)
        warnings.warn(
            f"residual spectrum is flat; defaulting to Nyquist/4 = {f_d:g}")
        return f_d
    _, k = np.unravel_index(int(mag.argmax()), mag.shape)
    return (k + 1) / span


def stage_amplitude(system, theta, lam: float, rule=None,
                    grid: np.ndarray | None = None) -> float:
    """RMS of the first-stage d0 residual over the validation grid."""
    y = standard_grid(lam) if grid is None else np.asarray(grid)
    r = LO.pointwise_residuals(system, theta, lam, y, order=0, rule=rule)
    eps = float(np.sqrt(np.mean(r[..., 0] ** 2)))
    if not np.isfinite(eps) or eps <= 0.0:
        raise ContractError("first stage residual must be finite and nonzero")
    return eps


def residual_frequency(system, theta, lam: float, rule=None,
                       n: int = 2048) -> float:
    """Dominant frequency of the d0 residual on a uniform compactified grid."""
    q = (np.arange(n) + 0.5) / n
    y = q_to_y(q, lam)
    r = LO.pointwise_residuals(system, theta, lam, y, order=0, rule=rule)
    return dominant_frequency(r[..., 0], span=1.0)


def zero_final_layer(theta: np.ndarray, spec: NetworkSpec) -> np.ndarray:
    """Copy of theta with the read-out layer zeroed (network output == 0)."""
    out = np.array(theta, dtype=float)
    fi, fo = spec.layer_dims()[-1]
    out[-(fi * fo + fo):] = 0.0
    return out


class ComposedField:
    """Stage-1 field (frozen parameters) plus eps times a stage-2 field."""

    def __init__(self, base: FieldAnsatz, theta1: np.ndarray,
                 stage2: FieldAnsatz, eps: float):
        if stage2.parity != base.parity or stage2.k_affine != base.k_affine:
            raise ContractError("stages must share the ansatz symmetry")
        self.base = base
        self.theta1 = np.asarray(theta1, dtype=float)
        self.stage2 = stage2
        self.eps = float(eps)
        self.name = base.name
        self.spec = stage2.spec
        self.parity = base.parity
        self.k_affine = base.k_affine

    def k_of(self, lam):
        return self.base.k_of(lam)

    def jets(self, theta, y, lam, order):
        j1 = field_jets(self.theta1, self.base, y, lam, order)
        j2 = field_jets(theta, self.stage2, y, lam, order)
        return T.add(T.jscale(j2, self.eps), j1)


class ComposedSystem:
    """Base system evaluated on composed fields; stage-2 params trainable."""

    def __init__(self, base, stage1_thetas, stage2_fields, eps: float):
        if len(stage1_thetas) != len(base.fields):
            raise ContractError("one stage-1 parameter block per field")
        self.base = base
        self.name = base.name
        self.needs_hilbert = base.needs_hilbert
        self.n_equations = base.n_equations
        self.eps = float(eps)
        self.fields = tuple(
            ComposedField(bf, th, sf, eps)
            for bf, th, sf in zip(base.fields, stage1_thetas, stage2_fields))

    def residual_parts(self, jets, y, hw=None):
        return self.base.residual_parts(jets, y, hw)

    def constraints(self):
        return self.base.constraints()


def build_stage2(system, theta1: np.ndarray, lam: float, *, rule=None,
                 widths=(16, 16), features: int = 32, head: str = "linear",
                 seed: int = 0, eps: float | None = None,
                 f_d: float | None = None):
    """Composed system with a zero-initialized Fourier corrector per field.

    Returns (composed_system, theta2_init, info).  Zero read-out layers
    make the composed residual match stage 1 exactly at initialization.
    """
    if f_d is None:
        f_d = residual_frequency(system, theta1, lam, rule=rule)
    if eps is None:
        eps = stage_amplitude(system, theta1, lam, rule=rule)
    sigma = 2.0 * np.pi * f_d
    parts, _ = LO.split_params(np.asarray(theta1, dtype=float), system)
    thetas1 = [np.asarray(t) for t in parts]
    spec2 = NetworkSpec(widths=tuple(widths), head=head,
                        fourier=int(features), sigma=float(sigma))
    stage2_fields = [
        FieldAnsatz(f.name, spec2, f.k_affine, f.parity)
        for f in system.fields]
    csys = ComposedSystem(system, thetas1, stage2_fields, eps)
    rng = np.random.default_rng(seed)
    blocks = [zero_final_layer(init_params(spec2, rng), spec2)
              for _ in stage2_fields]
    theta2 = np.concatenate(blocks)
    info = {"eps": float(eps), "f_d": float(f_d), "sigma": float(sigma)}
    return csys, theta2, info


@dataclass
class Stage2Result:
    theta2: np.ndarray
    system: object  # the composed system (or the base system on failure)
    eps: float
    f_d: float
    sigma: float
    improved: bool
    factor: float
    max_d0_before: float
    max_d0_after: float
    steps: int


def run_stage2(system, theta1: np.ndarray, lam: float, *, rule=None,
               widths=(16, 16), features: int = 32, head: str = "linear",
               steps: int = 4000, seed: int = 0, scale: float = 0.3,
               resample_every: int = 1500, linearized: bool = False,
               gn_config: G.GNConfig | None = None) -> Stage2Result:
    """Train the corrector at frozen lam; fall back to stage 1 on failure."""
    grid = standard_grid(lam)
    r1 = LO.pointwise_residuals(system, theta1, lam, grid, order=0, rule=rule)
    before = float(np.abs(r1[..., 0]).max())
    if not np.isfinite(before):
        raise ContractError("stage-1 residual must be finite")

    csys, theta2, info = build_stage2(
        system, theta1, lam, rule=rule, widths=widths, features=features,
        head=head, seed=seed)
    if steps <= 0:
        return Stage2Result(theta2, csys, info["eps"], info["f_d"],
                            info["sigma"], False, 1.0, before, before, 0)

    sampler = default_sampler(scale=scale, period=resample_every)
    state = G.new_state(theta2.size, seed + 1, gn_config or G.GNConfig())
    theta = theta2
    prog = None
    base_prog = None
    neg = None
    for step in range(steps):
        if step % resample_every == 0:
            rng = resample_stream(seed, 101, step // resample_every)
            fb = None
            if step > 0:
                qs = (np.arange(sampler.adaptive_grid) + 0.5) / sampler.adaptive_grid
                ys = q_to_y(qs, lam)
                fb = LO.residual_sq_sums(csys, theta, lam, ys, rule=rule)
            batches = build_batches(sampler, lam, rng, step // resample_every,
                                    residual_sq_on_grid=fb)
            prog = LO.ResidualProgram(csys, batches, LO.LossConfig(),
                                      rule=rule)
            if linearized:
                neg = ComposedSystem(
                    system, [f.theta1 for f in csys.fields],
                    [f.stage2 for f in csys.fields], -csys.eps)
                base_prog = LO.ResidualProgram(neg, batches, LO.LossConfig(),
                                               rule=rule)
                v1 = np.asarray(prog.view(zero_like_stage2(csys), lam))

        if linearized:
            def view_fn(th, _p=prog, _m=base_prog, _v=v1):
                vp = _p.view(th, lam)
                vm = _m.view(th, lam)
                return T.add(T.mul(T.sub(vp, vm), 0.5), _v)
        else:
            def view_fn(th, _p=prog):
                return _p.view(th, lam)
        theta, _ = G.gn_step(state, theta, view_fn)

    r2 = LO.pointwise_residuals(csys, theta, lam, grid, order=0, rule=rule)
    after = float(np.abs(r2[..., 0]).max())
    improved = np.isfinite(after) and after < before
    if not improved:
        warnings.warn("stage 2 did not improve the residual; keeping stage 1")
        return Stage2Result(theta2, csys, info["eps"], info["f_d"],
                            info["sigma"], False, 1.0, before, before, steps)
    return Stage2Result(theta, csys, info["eps"], info["f_d"], info["sigma"],
                        True, before / after, before, after, steps)


def zero_like_stage2(csys: ComposedSystem) -> np.ndarray:
    """Stage-2 parameter vector whose networks all output zero."""
    blocks = [zero_final_layer(np.zeros(f.spec.param_count()), f.spec)
              for f in csys.fields]
    return np.concatenate(blocks)
