"""Central-difference checking of hand-derived gradients.

The analytic backward pass is the only gradient source in this package, so
this oracle is what stands between a silent derivation bug and a quietly
wrong model. It perturbs one coordinate at a time and compares

    (loss(x + e) - loss(x - e)) / (2 e)

against the analytic value. Requires float64 parameters; at float32 the
difference quotient is dominated by rounding noise.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .params import ParameterSet


@dataclass
class SlotReport:
    name: str
    checked: int
    max_rel_err: float
    worst_coord: tuple[int, ...] | None
    analytic_at_worst: float = 0.0
    numeric_at_worst: float = 0.0

    def passed(self, tol: float) -> bool:
        return self.max_rel_err <= tol


@dataclass
class GradCheckReport:
    tol: float
    step: float
    slots: dict[str, SlotReport] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(s.passed(self.tol) for s in self.slots.values())

    @property
    def max_rel_err(self) -> float:
        return max((s.max_rel_err for s in self.slots.values()), default=0.0)

    def failing_slots(self) -> list[str]:
        return [n for n, s in self.slots.items() if not s.passed(self.tol)]

    def summary(self) -> str:
        lines = []
        for name, s in self.slots.items():
            status = "ok" if s.passed(self.tol) else "FAIL"
            lines.append(
                f"{status:4s} {name:16s} coords={s.checked:4d} max_rel_err={s.max_rel_err:.3e}"
            )
        return "\n".join(lines)


def finite_diff_check(
    loss_fn,
    params: ParameterSet,
    analytic: dict[str, np.ndarray],
    step: float = 1e-5,
    tol: float = 1e-4,
    max_coords_per_slot: int | None = None,
    rng: np.random.Generator | None = None,
    denom_floor: float = 1e-4,
) -> GradCheckReport:
    """Compare `analytic` against central differences of `loss_fn(params)`.

    Relative error per coordinate is |a - n| / max(|a|, |n|, denom_floor); the
    floor keeps near-zero gradients from producing spurious huge ratios while
    still catching genuinely wrong values. A slot passes when its max relative
    error over the checked coordinates is <= tol.
    """
    if params.dtype != np.dtype(np.float64):
        raise ValueError("finite_diff_check requires float64 parameters")
    report = GradCheckReport(tol=tol, step=step)
    for name in params.names():
        if name not in analytic:
            raise ValueError(f"missing analytic gradient for slot {name!r}")
        value = params[name]
        grad = np.asarray(analytic[name], dtype=np.float64)
        if grad.shape != value.shape:
            raise ValueError(
                f"analytic gradient shape mismatch for slot {name!r}: "
                f"{grad.shape} vs {value.shape}"
            )
        coords = [tuple(idx) for idx in np.ndindex(value.shape)]
        if max_coords_per_slot is not None and len(coords) > max_coords_per_slot:
            sampler = rng if rng is not None else np.random.default_rng(0)
            picked = sampler.choice(len(coords), size=max_coords_per_slot, replace=False)
            coords = [coords[i] for i in sorted(picked)]

        slot = SlotReport(name=name, checked=len(coords), max_rel_err=0.0, worst_coord=None)
        for idx in coords:
            original = value[idx]
            value[idx] = original + step
            up = float(loss_fn(params))
            value[idx] = original - step
            down = float(loss_fn(params))
            value[idx] = original
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"non-finite loss while checking slot {name!r} at {idx}")
            numeric = (up - down) / (2.0 * step)
            a = float(grad[idx])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), denom_floor)
            if rel > slot.max_rel_err:
                slot.max_rel_err = rel
                slot.worst_coord = idx
                slot.analytic_at_worst = a
                slot.numeric_at_worst = numeric
        report.slots[name] = slot
    return report
