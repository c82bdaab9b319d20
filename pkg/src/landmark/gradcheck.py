"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import Tape, Tensor, track_kinks


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class BlockReport:
    name: str
    max_rel_error: float
    checked: int
    max_abs_error: float
    kinked: int = 0


@dataclass
class GradCheckReport:
    blocks: list[BlockReport] = field(default_factory=list)
    tol: float = 1e-4

    @property
    def max_rel_error(self) -> float:
        return max((b.max_rel_error for b in self.blocks), default=0.0)

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def failures(self) -> list[str]:
        # a block whose every probed coordinate sat on a kink verified nothing
        return [b.name for b in self.blocks
                if not b.max_rel_error < self.tol or (b.checked == 0 and b.kinked > 0)]

    def lines(self) -> list[str]:
        out = []
        for b in self.blocks:
            status = "FAIL" if b.name in self.failures else "ok"
            kink = f" kinked={b.kinked}" if b.kinked else ""
            out.append(f"{b.name:<40s} n={b.checked:<5d} rel={b.max_rel_error:.3e} {status}{kink}")
        return out


def _scalar(value: Tensor, where: str) -> float:
    v = float(np.asarray(value.data).reshape(-1)[0])
    if not np.isfinite(v):
        raise NonFiniteLossError(f"loss is not finite ({v}) {where}")
    return v


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    max_entries: int | None = None,
    seed: int = 0,
    abs_floor: float = 1e-6,
    tape_grads: Mapping[str, np.ndarray] | None = None,
    skip_kinks: bool = True,
) -> GradCheckReport:
    """Compare tape gradients of the scalar ``f()`` against central differences.

    ``f`` must rebuild its graph from the current values in ``params`` each time
    it is called.  For each parameter block the relative error is
    ``max|fd - tape| / max(max|fd|, max|tape|, abs_floor)`` over the checked
    entries.  ``max_entries`` caps the number of (seeded, uniformly drawn)
    coordinates per block.  ``tape_grads`` overrides the tape result, which is
    how a corrupted gradient can be fed in as a negative control.

    With ``skip_kinks`` a coordinate whose +h or -h evaluation flips any ReLU
    relative to the unperturbed pass is excluded (the difference quotient
    straddles a non-differentiable point there) and another coordinate is
    drawn in its place; excluded coordinates are counted in the report.
    """
    if h <= 0:
        raise ValueError("finite difference step h must be positive")
    for p in params.values():
        p.grad = None
    with Tape() as tape, track_kinks() as base_pattern:
        loss = f()
    _scalar(loss, "at the unperturbed parameters")
    tape.backward(loss)
    grads = {
        name: (np.asarray(tape_grads[name]) if tape_grads and name in tape_grads else
               (p.grad if p.grad is not None else np.zeros_like(p.data)))
        for name, p in params.items()
    }

    def evaluate(where: str) -> tuple[float, list[bytes]]:
        with track_kinks() as pattern:
            v = _scalar(f(), where)
        return v, pattern

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        budget = n if max_entries is None else min(n, max_entries)
        candidates = np.arange(n) if budget == n else rng.permutation(n)
        idx, fd, kinked = [], [], 0
        for i in candidates:
            if len(idx) == budget:
                break
            orig = flat[i]
            flat[i] = orig + h
            fp, pat_p = evaluate(f"at {name}[{i}] + h")
            flat[i] = orig - h
            fm, pat_m = evaluate(f"at {name}[{i}] - h")
            flat[i] = orig
            if skip_kinks and (pat_p != base_pattern or pat_m != base_pattern):
                kinked += 1
                continue
            idx.append(int(i))
            fd.append((fp - fm) / (2.0 * h))
        idx_arr = np.sort(np.asarray(idx, dtype=np.int64))
        fd_arr = np.asarray(fd)[np.argsort(np.asarray(idx, dtype=np.int64))] if idx else np.zeros(0)
        tg = grads[name].reshape(-1)[idx_arr]
        diff = np.abs(fd_arr - tg)
        scale = max(np.abs(fd_arr).max(initial=0.0), np.abs(tg).max(initial=0.0), abs_floor)
        report.blocks.append(BlockReport(name, float(diff.max(initial=0.0) / scale), int(idx_arr.size),
                                         float(diff.max(initial=0.0)), kinked))
    return report
