"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from shadoc.autodiff import functional as F
from shadoc.autodiff.tensor import GradTape, Tensor, no_grad, precision


@dataclass
class GradcheckReport:
    max_rel_error: float
    n_checked: int
    failures: list[tuple[int, tuple[int, ...], float, float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def element_ok(analytic: float, numeric: float, rtol: float = 1e-3,
               small: float = 1e-4, small_rtol: float = 1e-2, atol: float = 1e-8) -> tuple[bool, float]:
    """Relative-error acceptance for one gradient entry.

    Entries whose analytic magnitude is below ``small`` use the looser
    ``small_rtol``; differences below ``atol`` always pass because the
    relative error of two near-zero numbers is meaningless.
    """
    diff = abs(analytic - numeric)
    denom = max(abs(analytic), abs(numeric))
    rel = diff / denom if denom > 0 else 0.0
    if diff <= atol:
        return True, rel
    tol = small_rtol if abs(analytic) < small else rtol
    return rel < tol, rel


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray | Tensor], *,
              h: float = 1e-3, rtol: float = 1e-3, max_checks: int | None = None,
              seed: int = 0) -> GradcheckReport:
    """Compare tape gradients of ``fn`` with central finite differences.

    ``inputs`` may be arrays (converted to fresh leaves) or existing leaf
    tensors such as module parameters, which are perturbed in place. The
    output of ``fn`` is reduced to a scalar by a fixed random projection.
    Everything runs in float64.
    """
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        leaves = []
        for x in inputs:
            if isinstance(x, Tensor):
                x.data = x.data.astype(np.float64)
                x.requires_grad = True
                x.grad = None
                leaves.append(x)
            else:
                leaves.append(Tensor(np.array(x, dtype=np.float64), requires_grad=True))

        with no_grad():
            probe = fn(*leaves)
        proj = Tensor(rng.standard_normal(probe.shape))

        def scalar() -> Tensor:
            return F.sum(F.mul(fn(*leaves), proj))

        with GradTape() as tape:
            loss = scalar()
        tape.backward(loss)

        report = GradcheckReport(0.0, 0)
        for li, leaf in enumerate(leaves):
            flat = leaf.data.reshape(-1)
            positions = np.arange(flat.size)
            if max_checks is not None and flat.size > max_checks:
                positions = rng.choice(flat.size, size=max_checks, replace=False)
            analytic_all = leaf.grad.reshape(-1)
            for p in positions:
                orig = flat[p]
                with no_grad():
                    flat[p] = orig + h
                    fp = scalar().item()
                    flat[p] = orig - h
                    fm = scalar().item()
                flat[p] = orig
                numeric = (fp - fm) / (2 * h)
                analytic = float(analytic_all[p])
                ok, rel = element_ok(analytic, numeric, rtol=rtol)
                report.n_checked += 1
                report.max_rel_error = max(report.max_rel_error, rel)
                if not ok:
                    report.failures.append((li, np.unravel_index(p, leaf.shape), analytic, numeric))
        return report
