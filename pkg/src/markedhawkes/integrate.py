"""Closed-form integration of network kernels and ground intensities.

Between hidden-unit zero crossings a ReLU network is affine in elapsed time,
so the exponential-link kernel integrates segment by segment in closed form,
and the clamped identity-link intensity is piecewise linear once the outer
clamp's own crossings are added.  Quadrature is never used here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _core
from .errors import NumericOverflowError, PreconditionError
from .model import EventSequence, HawkesModel, KernelNet, Link, ModelKind, Params


@dataclass(frozen=True)
class BreakpointList:
    points: tuple[float, ...]

    def __post_init__(self):
        pts = tuple(float(x) for x in self.points)
        object.__setattr__(self, "points", pts)
        if len(pts) < 2 or any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValueError("breakpoints must be strictly increasing with both endpoints")

    def __iter__(self):
        return iter(self.points)

    def __len__(self):
        return len(self.points)

    @property
    def interior(self) -> tuple[float, ...]:
        return self.points[1:-1]

    def segments(self):
        return list(zip(self.points, self.points[1:]))


def hidden_breakpoints(net: KernelNet, m: float, length: float) -> BreakpointList:
    """Zero crossings y_i = -(a2_i m + b1_i) / a1_i inside (0, length), plus both ends."""
    if not length > 0:
        raise PreconditionError("interval length must be positive")
    pts = _core.sorted_breakpoints(net.a1, net.a2, net.b1, float(m), 0.0, float(length))
    return BreakpointList(tuple(pts))


def integrate_kernel_exp(net: KernelNet, m: float, length: float) -> float:
    """int_0^length phi(s, m) ds for an exponential-link network."""
    if net.link is not Link.EXPONENTIAL:
        raise PreconditionError("integrate_kernel_exp needs an exponential-link network")
    if length < 0:
        raise PreconditionError("integration length must be >= 0")
    if length == 0:
        return 0.0
    g = np.zeros(net.p)
    val, status, sa, sb = _core.exp_net_integral(net.a1, net.a2, net.b1, net.a3, net.b2,
                                                 float(m), 0.0, float(length), 0.0, False,
                                                 g, g, g, g)
    if status == _core.STATUS_OVERFLOW:
        raise NumericOverflowError(
            f"kernel exponent exceeds {_core.EXP_LIMIT:g} on segment [{sa:.17g}, {sb:.17g}] (mark {m})")
    return float(val)


# ---------------------------------------------------------------------------
# ground intensity
# ---------------------------------------------------------------------------


class _Prepared:
    """Model arrays and a sequence converted to the model's scaled units."""

    def __init__(self, model: HawkesModel, seq: EventSequence):
        if seq.dims != model.dims:
            raise PreconditionError(f"sequence has {seq.dims} dims, model has {model.dims}")
        tr = model.transform
        self.model = model
        self.time_scale = tr.time_scale
        self.times = np.ascontiguousarray(seq.times * tr.time_scale)
        self.dims = np.ascontiguousarray(seq.event_dims, dtype=np.int64)
        self.marks = np.ascontiguousarray(tr.scale_marks(seq.marks, seq.event_dims))
        self.window = np.inf if model.window is None else float(model.window)
        self.nonlinear = model.kind is ModelKind.NONLINEAR_NNNH
        self.arrays = tuple(np.ascontiguousarray(getattr(model, k), dtype=float)
                            for k in ("mu", "a1", "a2", "b1", "a3", "b2"))

    def grad_buffers(self):
        return tuple(np.zeros_like(a) for a in self.arrays)

    def prev_times(self, start: float = 0.0) -> np.ndarray:
        """Time of the previous same-dimension event (or ``start``) for every event."""
        prev = np.full(len(self.times), start * self.time_scale)
        last = {}
        for n, d in enumerate(self.dims):
            if d in last:
                prev[n] = self.times[last[d]]
            last[d] = n
        return prev


def _raise_status(status: int, where: str):
    if status == _core.STATUS_OVERFLOW:
        raise NumericOverflowError(f"kernel exponent overflow while integrating {where}")
    if status != _core.STATUS_OK:
        raise NumericOverflowError(f"numeric failure (status {status}) while integrating {where}")


def _integrated(model, d, seq, horizon, start, want_grad, kind=None):
    if kind is not None and model.kind is not kind:
        raise PreconditionError(f"this integral needs a {kind.value} model, got {model.kind.value}")
    if not 0 <= d < model.dims:
        raise PreconditionError(f"dimension {d} outside [0, {model.dims})")
    horizon = seq.horizon if horizon is None else float(horizon)
    if horizon < start:
        raise PreconditionError("integration end precedes its start")
    prep = _Prepared(model, seq)
    grads = prep.grad_buffers()
    val, status, bad = _core.pooled_compensator(
        prep.nonlinear, start * prep.time_scale, horizon * prep.time_scale, d,
        prep.times, prep.dims, prep.marks, *prep.arrays, prep.window, 1.0, want_grad, *grads)
    if status != _core.STATUS_OK:
        _raise_status(status, f"dimension {d} (event {bad})")
    return float(val), Params(*grads)


def integrated_ground_intensity_snh(model: HawkesModel, d: int, seq: EventSequence,
                                    horizon: float | None = None, start: float = 0.0) -> float:
    """int_start^horizon lambda_d(s) ds for a linear (exponential-link) model; raw units in."""
    return _integrated(model, d, seq, horizon, start, False, ModelKind.LINEAR_SNH)[0]


def integrated_ground_intensity_nnnh(model: HawkesModel, d: int, seq: EventSequence,
                                     horizon: float | None = None, start: float = 0.0) -> float:
    """int_start^horizon max(mu_d + sum phi, 0) ds for a clamped identity-link model."""
    return _integrated(model, d, seq, horizon, start, False, ModelKind.NONLINEAR_NNNH)[0]


def integrated_ground_intensity(model: HawkesModel, d: int, seq: EventSequence,
                                horizon: float | None = None, start: float = 0.0) -> float:
    return _integrated(model, d, seq, horizon, start, False)[0]


def integrated_ground_intensity_grad(model: HawkesModel, d: int, seq: EventSequence,
                                     horizon: float | None = None,
                                     start: float = 0.0) -> tuple[float, Params]:
    """Compensator and its gradient with respect to the model's stored parameters."""
    return _integrated(model, d, seq, horizon, start, True)


def interval_compensators(model: HawkesModel, seq: EventSequence, idx=None,
                          start: float = 0.0) -> np.ndarray:
    """int of lambda_{d_n} from the previous same-dimension event (or ``start``) to t_n.

    ``idx`` selects events (default: all); every event before each selected
    one is used as history.
    """
    return event_terms(model, seq, idx, start)[1]


def event_terms(model: HawkesModel, seq: EventSequence, idx=None, start: float = 0.0):
    """(intensity at each selected event, compensator of its interval, clamped flags), scaled units."""
    prep = _Prepared(model, seq)
    idx = np.arange(len(seq)) if idx is None else np.asarray(idx, dtype=np.int64)
    g = prep.grad_buffers()
    lam, comp, status, clamped = _core.event_terms(
        prep.nonlinear, idx, prep.prev_times(start), prep.times, prep.dims, prep.marks,
        *prep.arrays, prep.window, 0.0, False, 0.0, *g)
    bad = np.flatnonzero(status == _core.STATUS_OVERFLOW)
    if len(bad):
        _raise_status(_core.STATUS_OVERFLOW, f"the interval ending at event {int(idx[bad[0]])}")
    return lam, comp, clamped, status
