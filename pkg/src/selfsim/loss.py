"""Training objective: weighted d0/d1/d2 residual losses plus data terms.

Everything is phrased as a flat vector of weighted scalar residuals (the
"view"): entry e_i carries its own sqrt-weight so the reported loss is
exactly L = sum_i e_i^2.  The Gauss-Newton optimizer differentiates the
view, never the scalar, so the weighting must live inside the entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as T
from .ansatz import field_jets


def _jets(theta, fld, y, lam, order):
    """Field jets, honoring a field's own evaluator when it has one."""
    fn = getattr(fld, "jets", None)
    if fn is not None:
        return fn(theta, y, lam, order)
    return field_jets(theta, fld, y, lam, order)
from .equations import combine_parts
from .errors import ContractError, PropagationError
from .hilbert import HilbertOperator, HilbertRule

LEVELS = (("d0", 0), ("d1", 1), ("d2", 2))


@dataclass(frozen=True)
class LossConfig:
    c_d0: float = 1.0
    c_d1: float = 0.1
    c_d2: float = 0.01
    far_points: tuple = ()
    far_weight: float = 0.0
    relu_bounds: tuple = ()  # (field, order, target, weight): relu(value - target)

    def __post_init__(self):
        if self.c_d0 < 0 or self.c_d1 < 0 or self.c_d2 < 0:
            raise ContractError("loss coefficients must be >= 0")
        if not (self.c_d0 or self.c_d1 or self.c_d2):
            raise ContractError("at least one residual loss must be active")

    def coeff(self, name: str) -> float:
        return {"d0": self.c_d0, "d1": self.c_d1, "d2": self.c_d2}[name]


def split_params(theta, system):
    """Per-field slices of the flat parameter vector."""
    sizes = [f.spec.param_count() for f in system.fields]
    out, at = [], 0
    for s in sizes:
        out.append(T.slice_axis(theta, 0, at, at + s))
        at += s
    return out, at


def param_size(system) -> int:
    return sum(f.spec.param_count() for f in system.fields)


def _value(x) -> np.ndarray:
    return x.value if isinstance(x, T.Var) else np.asarray(x)


class ResidualProgram:
    """Residual view and bookkeeping for one resample period.

    Holds the frozen batches, precomputed Hilbert kernels bound to the
    batch points, and the constraint table.  ``view`` works both traced
    (theta is a tape Var) and plain (theta is an ndarray): the ops fold
    constants, so it is one code path.
    """

    def __init__(self, system, batches: dict, config: LossConfig,
                 rule: HilbertRule | None = None, train_lambda: bool = False):
        self.system = system
        self.config = config
        self.train_lambda = bool(train_lambda)
        self.levels = []
        for name, order in LEVELS:
            if config.coeff(name) <= 0.0:
                continue
            b = batches.get(name)
            if b is None or b.y.size == 0:
                raise ContractError(f"active loss {name} has no batch")
            self.levels.append((name, order, config.coeff(name), b))
        if not self.levels:
            raise ContractError("no active loss levels")
        self.max_order = max(o for _, o, _, _ in self.levels)
        self.rule = rule
        self.h_ops = {}
        if system.needs_hilbert:
            if rule is None:
                raise ContractError("this system needs a Hilbert rule")
            for name, _, _, b in self.levels:
                self.h_ops[name] = HilbertOperator(rule, b.y)
        self.constraints = system.constraints()
        orders = [c.order for c in self.constraints]
        orders += [rb[1] for rb in config.relu_bounds]
        self.constraint_order = max(orders) if orders else 1

    # ----- assembly -----

    def view(self, theta, lam):
        """Flat weighted residual vector; L = sum(view**2)."""
        entries, labels = self._assemble(theta, lam)
        out = T.concat(entries, axis=0) if len(entries) > 1 else entries[0]
        v = _value(out)
        if not np.all(np.isfinite(v)):
            bad = int(np.flatnonzero(~np.isfinite(v))[0])
            raise PropagationError(f"non-finite residual in {self._locate(labels, bad)}")
        return out

    def loss_value(self, theta, lam) -> float:
        v = _value(self.view(theta, lam))
        return float(np.sum(v * v))

    def loss_parts(self, theta, lam) -> dict:
        """Named contributions; sums to loss_value."""
        entries, labels = self._assemble(theta, lam)
        out = {}
        for (label, _), e in zip(labels, entries):
            v = _value(e)
            out[label] = out.get(label, 0.0) + float(np.sum(v * v))
        return out

    def _locate(self, labels, flat: int) -> str:
        for label, n in labels:
            if flat < n:
                return f"{label} entry {flat}"
            flat -= n
        return "unknown entry"

    def _lam_pieces(self, theta, lam):
        if not self.train_lambda:
            return theta, float(lam)
        n = _value(theta).shape[0]
        lam_var = T.reshape(T.slice_axis(theta, 0, n - 1, n), ())
        return T.slice_axis(theta, 0, 0, n - 1), lam_var

    def _assemble(self, theta, lam):
        theta, lam = self._lam_pieces(theta, lam)
        thetas, _ = split_params(theta, self.system)
        fields = self.system.fields
        entries, labels = [], []

        node_w = None
        if self.system.needs_hilbert:
            node_w = _jets(thetas[0], fields[0], self.rule.pos, lam,
                                self.max_order)

        for name, order, coeff, batch in self.levels:
            jets = [_jets(th, f, batch.y, lam, order + 1)
                    for th, f in zip(thetas, fields)]
            hw = None
            if self.system.needs_hilbert:
                hw = self.h_ops[name].apply_jets(
                    T.jtrunc(node_w, order), T.jtrunc(jets[0], order))
            parts = self.system.residual_parts(jets, batch.y, hw)
            n_eq = len(parts)
            w = np.sqrt(coeff * batch.rho / (batch.y.size * n_eq))
            for k, (a, b) in enumerate(parts):
                r = T.jget(combine_parts(a, b, lam), order)
                entries.append(T.mul(r, w))
                labels.append((f"{name}/eq{k}", batch.y.size))

        if self.constraints or self.config.relu_bounds:
            y0 = np.zeros(1)
            origin = [_jets(th, f, y0, lam, self.constraint_order)
                      for th, f in zip(thetas, fields)]
            for c in self.constraints:
                val = T.jget(origin[c.field], c.order)
                e = T.mul(T.add(val, -c.target), np.sqrt(c.weight))
                entries.append(e)
                labels.append((f"constraint/{fields[c.field].name}^({c.order})(0)", 1))
            for fi, order, target, weight in self.config.relu_bounds:
                val = T.jget(origin[fi], order)
                e = T.mul(T.relu(T.add(val, -target)), np.sqrt(weight))
                entries.append(e)
                labels.append((f"bound/{fields[fi].name}^({order})(0)", 1))

        if self.config.far_points and self.config.far_weight > 0.0:
            y_far = np.asarray(self.config.far_points, dtype=float)
            wf = np.sqrt(self.config.far_weight / max(1, y_far.size))
            for th, f in zip(thetas, fields):
                phi = T.jget(_jets(th, f, y_far, lam, 0), 0)
                entries.append(T.mul(phi, wf))
                labels.append((f"far/{f.name}", y_far.size))

        return entries, labels


def equation_view_from_jets(system, batch, jets, lam, coeff: float,
                            order: int, hw=None) -> np.ndarray:
    """Weighted level view from externally supplied field jets.

    Lets oracle profiles stand in for the network when testing that the
    loss vanishes on exact solutions.
    """
    parts = system.residual_parts(jets, batch.y, hw)
    n_eq = len(parts)
    w = np.sqrt(coeff * batch.rho / (batch.y.size * n_eq))
    cols = [np.asarray(_value(T.jget(combine_parts(a, b, lam), order))) * w
            for a, b in parts]
    return np.concatenate(cols)


def pointwise_residuals(system, theta, lam: float, y: np.ndarray,
                        order: int = 0, rule: HilbertRule | None = None,
                        chunk: int = 2048) -> np.ndarray:
    """Residual jets (n_eq, len(y), order+1) on an arbitrary grid.

    Unweighted; used by validation metrics and adaptive sampling.  Hilbert
    kernels are built per chunk to bound memory.
    """
    y = np.asarray(y, dtype=float)
    thetas, _ = split_params(np.asarray(theta), system)
    fields = system.fields
    node_w = None
    if system.needs_hilbert:
        if rule is None:
            raise ContractError("this system needs a Hilbert rule")
        node_w = _jets(thetas[0], fields[0], rule.pos, lam, order)
    out = np.zeros((system.n_equations, y.size, order + 1))
    for at in range(0, y.size, chunk):
        sl = slice(at, min(at + chunk, y.size))
        yc = y[sl]
        jets = [_jets(th, f, yc, lam, order + 1)
                for th, f in zip(thetas, fields)]
        hw = None
        if system.needs_hilbert:
            op = HilbertOperator(rule, yc)
            hw = op.apply_jets(node_w, np.asarray(jets[0])[..., : order + 1])
        parts = system.residual_parts(jets, yc, hw)
        for k, (a, b) in enumerate(parts):
            out[k, sl] = np.asarray(_value(combine_parts(a, b, lam)))
    return out


def residual_sq_sums(system, theta, lam: float, y: np.ndarray,
                     rule: HilbertRule | None = None) -> np.ndarray:
    """Sum over equations of squared d0 residuals, for adaptive sampling."""
    r = pointwise_residuals(system, theta, lam, y, order=0, rule=rule)
    return np.sum(r[..., 0] ** 2, axis=0)


def constraint_defect(system, theta, lam: float) -> float:
    """Largest origin-pin violation, 0.0 when the system has none.

    Guards best-state selection: the zero field can score a perfect
    residual while ignoring every origin pin.
    """
    cons = system.constraints()
    if not cons:
        return 0.0
    order = max(c.order for c in cons)
    thetas, _ = split_params(np.asarray(theta), system)
    y0 = np.zeros(1)
    origin = {}
    worst = 0.0
    for c in cons:
        if c.field not in origin:
            origin[c.field] = _jets(thetas[c.field], system.fields[c.field],
                                    y0, lam, order)
        val = float(_value(T.jget(origin[c.field], c.order)).reshape(-1)[0])
        worst = max(worst, abs(val - c.target))
    return worst
