"""Stochastic localization on atom clouds.

The density of mu_t is carried as per-atom log-weights and advanced by the
exponential Euler scheme

    l(x) <- l(x) + <A^{-1/2}(x - a), dW> - 1/2 |A^{-1/2}(x - a)|^2 dt

followed by renormalization.  Paths are simulated in fixed blocks of
``BLOCK`` lanes, vectorized over the block; each path draws from its own
counter-based stream so results do not depend on the thread count.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import rng as _rng
from .errors import CapabilityError, ConfigurationError, InputError, PreconditionError, TruncationError
from .measures import DiscreteMeasure, GridMeasure, t2_distance

DEFAULT_DT = 1e-3
DEFAULT_HORIZON = 12.0
COLLAPSE_EPS = 1e-6
COLLAPSE_TRACE = 1e-8
EIG_FLOOR = 1e-10
MAX_DT = 0.1
HALVING_TRIGGER = 1.0
HALVING_MASS = 1e-3
MAX_HALVINGS = 24
MAX_SUBSTEPS = 50_000_000
BLOCK = 1024
CHUNK_STEPS = 256

_RULE_KINDS = ("fixed-horizon", "op-norm-integral-threshold", "collapse")


@dataclass(frozen=True)
class StoppingRule:
    """When a path stops.  Every rule also stops on collapse and at ``t_max``."""

    kind: str
    t_max: float = DEFAULT_HORIZON
    theta: float = math.inf
    eps: float = COLLAPSE_EPS

    def __post_init__(self):
        if self.kind not in _RULE_KINDS:
            raise ConfigurationError(f"unknown stopping rule {self.kind!r}")
        if not self.t_max >= 0:
            raise ConfigurationError("t_max must be >= 0")
        if self.kind == "fixed-horizon" and not self.t_max > 0 and self.t_max != 0:
            raise ConfigurationError("t_max must be > 0")
        if not self.theta > 0:
            raise ConfigurationError("theta must be > 0")
        if not 0 < self.eps < 1:
            raise ConfigurationError("eps must lie in (0, 1)")

    @classmethod
    def fixed_horizon(cls, t_max: float) -> "StoppingRule":
        return cls("fixed-horizon", t_max=t_max)

    @classmethod
    def threshold(cls, theta: float, t_max: float = DEFAULT_HORIZON) -> "StoppingRule":
        return cls("op-norm-integral-threshold", t_max=t_max, theta=theta)

    @classmethod
    def collapse(cls, eps: float = COLLAPSE_EPS, t_max: float = DEFAULT_HORIZON) -> "StoppingRule":
        return cls("collapse", t_max=t_max, eps=eps)


@dataclass(frozen=True, eq=False)
class LocalizationState:
    t: float
    log_weights: np.ndarray
    a: np.ndarray
    A: np.ndarray
    B_accum: np.ndarray
    qv_accum: np.ndarray
    collapsed: bool
    atoms: np.ndarray = field(repr=False)
    op_integral: float = 0.0
    tr_A0: float = 0.0
    singular: bool = False

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def dimension(self) -> int:
        return self.atoms.shape[1]


# --------------------------------------------------------------------------
# vectorized kernels; leading axis = path lane


def _moments(atoms: np.ndarray, logw: np.ndarray):
    w = np.exp(logw)
    a = w @ atoms
    Y = atoms[None, :, :] - a[:, None, :]
    A = np.einsum("pm,pmi,pmj->pij", w, Y, Y)
    A = 0.5 * (A + A.transpose(0, 2, 1))
    return w, a, A


def _spectral(A: np.ndarray, floor: float):
    lam, V = np.linalg.eigh(A)
    keep = lam > floor
    inv_sqrt = np.where(keep, 1.0 / np.sqrt(np.where(keep, lam, 1.0)), 0.0)
    Vt = V.transpose(0, 2, 1)
    S = (V * inv_sqrt[:, None, :]) @ Vt
    P = (V * (inv_sqrt**2)[:, None, :]) @ Vt
    return S, P, np.maximum(lam, 0.0), ~keep.all(axis=1)


def _log_increment(atoms, logw, a, S, dW, h):
    Y = atoms[None, :, :] - a[:, None, :]
    u = Y @ S
    incr = (u @ dW[:, :, None])[..., 0] - 0.5 * h[:, None] * np.einsum("pmj,pmj->pm", u, u)
    new = logw + incr
    top = new.max(axis=1, keepdims=True)
    new -= top + np.log(np.exp(new - top).sum(axis=1, keepdims=True))
    return new


def _is_collapsed(w: np.ndarray, A: np.ndarray, tr_A0: float, eps: float) -> np.ndarray:
    trA = np.trace(A, axis1=1, axis2=2)
    return (w.max(axis=1) > 1.0 - eps) | (trA < COLLAPSE_TRACE * tr_A0)


# --------------------------------------------------------------------------
# single-path API


def init(measure: DiscreteMeasure | GridMeasure) -> LocalizationState:
    if isinstance(measure, GridMeasure):
        measure = measure.to_discrete()
    atoms = measure.atoms
    with np.errstate(divide="ignore"):
        logw = np.log(measure.weights)
    w, a, A = _moments(atoms, logw[None])
    n = atoms.shape[1]
    tr0 = float(np.trace(A[0]))
    collapsed = bool(measure.size == 1 or _is_collapsed(w, A, tr0, COLLAPSE_EPS)[0])
    zero = np.zeros((n, n))
    return LocalizationState(0.0, logw, a[0], A[0], zero, zero.copy(), collapsed, atoms,
                             0.0, tr0)


def step(state: LocalizationState, dt: float, dW) -> LocalizationState:
    """One exponential Euler step of length ``dt`` with Brownian increment ``dW``."""
    if state.collapsed:
        return state
    dW = np.asarray(dW, dtype=float).reshape(state.dimension)
    if not (np.isfinite(dt) and np.all(np.isfinite(dW))):
        raise InputError("non-finite increment")
    if not 0 < dt <= MAX_DT:
        raise PreconditionError(f"dt must lie in (0, {MAX_DT}]")
    floor = EIG_FLOOR * max(state.tr_A0, np.finfo(float).tiny)
    S, P, lam, singular = _spectral(state.A[None], floor)
    h = np.array([dt])
    new = _log_increment(state.atoms, state.log_weights[None], state.a[None], S, dW[None], h)
    w, a, A = _moments(state.atoms, new)
    collapsed = bool(_is_collapsed(w, A, state.tr_A0, COLLAPSE_EPS)[0])
    return LocalizationState(
        state.t + dt, new[0], a[0], A[0],
        state.B_accum + P[0] * dt, state.qv_accum + state.A * dt,
        collapsed, state.atoms, state.op_integral + lam[0, -1] * dt, state.tr_A0,
        state.singular or bool(singular[0]),
    )


# --------------------------------------------------------------------------
# batched engine


class _Block:
    """Lock-step simulation of a block of paths started from one state."""

    def __init__(self, state: LocalizationState, streams: Sequence[_rng.Stream],
                 rule: StoppingRule, dt: float, record_steps: np.ndarray):
        P = len(streams)
        self.rule = rule
        self.dt = dt
        self.atoms = state.atoms
        self.n = state.dimension
        self.tr_A0 = state.tr_A0
        self.floor = EIG_FLOOR * max(state.tr_A0, np.finfo(float).tiny)
        self.t0 = state.t
        self.logw = np.tile(state.log_weights, (P, 1))
        self.a = np.tile(state.a, (P, 1))
        self.A = np.tile(state.A, (P, 1, 1))
        self.B = np.tile(state.B_accum, (P, 1, 1))
        self.qv = np.tile(state.qv_accum, (P, 1, 1))
        self.opint = np.full(P, state.op_integral)
        self.t = np.full(P, state.t)
        self.singular = np.full(P, state.singular)
        self.active = np.full(P, not state.collapsed)
        self.reason = np.array(["collapse" if state.collapsed else ""] * P, dtype=object)
        self.streams = list(streams)
        self._main = [s.generator(0) for s in streams]
        self._bridge = [s.generator(1) for s in streams]
        self._z = np.zeros((P, CHUNK_STEPS, self.n))
        self.record_steps = record_steps
        self.records: list[tuple] = []
        self.substeps = 0
        self._is_threshold = rule.kind == "op-norm-integral-threshold" and math.isfinite(rule.theta)

    # -- bookkeeping
    def _snapshot(self, step_index: int):
        lam = np.linalg.eigvalsh(self.A)[:, -1]
        self.records.append((
            step_index,
            self.t.copy(),
            self.a.copy(),
            np.trace(self.A, axis1=1, axis2=2),
            np.maximum(lam, 0.0),
            np.trace(self.qv, axis1=1, axis2=2),
            self.active.copy(),
        ))

    def _normals(self, idx: np.ndarray, k: int) -> np.ndarray:
        j = k % CHUNK_STEPS
        if j == 0:
            for p in idx:
                self._z[p] = self._main[p].standard_normal((CHUNK_STEPS, self.n))
        return self._z[idx, j]

    # -- one (sub)step with recursive Brownian-bridge halving
    def _advance(self, idx: np.ndarray, dW: np.ndarray, h: np.ndarray, depth: int):
        if idx.size == 0:
            return
        self.substeps += idx.size
        if self.substeps > MAX_SUBSTEPS:
            raise TruncationError("step budget exceeded")
        logw = self.logw[idx]
        A = self.A[idx]
        S, Pinv, lam, singular = _spectral(A, self.floor)
        opA = lam[:, -1]
        h_eff = h
        capped = np.zeros(idx.size, dtype=bool)
        if self._is_threshold:
            remaining = self.rule.theta - self.opint[idx]
            with np.errstate(divide="ignore", invalid="ignore"):
                cap = np.where(opA > 0, remaining / opA, np.inf)
            capped = cap <= h
            h_eff = np.where(capped, np.maximum(cap, 0.0), h)
        dW_eff = dW * np.sqrt(h_eff / h)[:, None]
        new = _log_increment(self.atoms, logw, self.a[idx], S, dW_eff, h_eff)

        live = np.exp(logw) >= HALVING_MASS
        change = np.where(live, np.abs(new - logw), 0.0).max(axis=1)
        split = (change > HALVING_TRIGGER) & (depth < MAX_HALVINGS)

        ok = ~split
        if np.any(ok):
            j = idx[ok]
            he = h_eff[ok]
            self.logw[j] = new[ok]
            self.B[j] += Pinv[ok] * he[:, None, None]
            self.qv[j] += A[ok] * he[:, None, None]
            self.opint[j] += opA[ok] * he
            self.t[j] += he
            self.singular[j] |= singular[ok]
            w, a, An = _moments(self.atoms, new[ok])
            self.a[j] = a
            self.A[j] = An
            coll = _is_collapsed(w, An, self.tr_A0, self.rule.eps)
            stop_thr = capped[ok] & ~coll
            self.active[j[coll]] = False
            self.reason[j[coll]] = "collapse"
            self.active[j[stop_thr]] = False
            self.reason[j[stop_thr]] = "threshold"

        if np.any(split):
            j = idx[split]
            hs = h[split]
            zb = np.stack([self._bridge[p].standard_normal(self.n) for p in j])
            dW1 = 0.5 * dW[split] + np.sqrt(hs / 4.0)[:, None] * zb
            dW2 = dW[split] - dW1
            self._advance(j, dW1, 0.5 * hs, depth + 1)
            still = self.active[j]
            self._advance(j[still], dW2[still], 0.5 * hs[still], depth + 1)

    def run(self):
        dt = self.dt
        n_steps = int(math.floor((self.rule.t_max - self.t0) / dt + 1e-9)) if self.rule.t_max > self.t0 else 0
        self._snapshot(0)
        rec = set(int(s) for s in self.record_steps)
        for k in range(n_steps):
            idx = np.flatnonzero(self.active)
            if idx.size == 0:
                break
            z = self._normals(idx, k)
            h = np.full(idx.size, dt)
            self._advance(idx, z * math.sqrt(dt), h, 0)
            alive = idx[self.active[idx]]
            self.t[alive] = self.t0 + (k + 1) * dt
            if (k + 1) in rec:
                self._snapshot(k + 1)
        self.reason[self.active] = "horizon"
        self.active[:] = False
        self._snapshot(-1)


@dataclass(frozen=True, eq=False)
class PathTrace:
    """Records of one path; the last record is the state at the stopping time."""

    times: np.ndarray
    a: np.ndarray
    trA: np.ndarray
    opA: np.ndarray
    trQV: np.ndarray
    terminal_atom: int | None
    stream_index: int
    stop_reason: str
    final_state: LocalizationState = field(repr=False)

    def value_at(self, t: float, series: str = "opA") -> float:
        """Series value at the last record at or before ``t`` (stopped paths hold)."""
        arr = getattr(self, series)
        i = int(np.searchsorted(self.times, t + 1e-12, side="right")) - 1
        return float(arr[max(i, 0)])

    def to_csv(self, dest=None) -> str:
        n = self.a.shape[1]
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["t"] + [f"a_{i + 1}" for i in range(n)] + ["trA", "opA", "trQV"])
        for r in range(self.times.size):
            wr.writerow([repr(float(self.times[r]))] + [repr(float(v)) for v in self.a[r]]
                        + [repr(float(self.trA[r])), repr(float(self.opA[r])), repr(float(self.trQV[r]))])
        text = buf.getvalue()
        if dest is not None:
            with open(dest, "w", newline="") as fh:
                fh.write(text)
        return text


def _record_steps(dt: float, t0: float, t_max: float, record_every: int | None,
                  sample_times: Sequence[float] = ()) -> np.ndarray:
    n_steps = int(math.floor((t_max - t0) / dt + 1e-9)) if t_max > t0 else 0
    every = record_every or max(1, int(round(0.05 / dt)))
    steps = set(range(every, n_steps + 1, every))
    for t in sample_times:
        k = (t - t0) / dt
        if abs(k - round(k)) > 1e-6 or round(k) < 0:
            raise InputError(f"sample time {t} is not on the dt grid")
        if round(k) > n_steps:
            raise InputError(f"sample time {t} beyond the horizon")
        if round(k) > 0:
            steps.add(int(round(k)))
    return np.array(sorted(steps), dtype=int)


def _simulate_block(state, streams, rule, dt, record_steps) -> _Block:
    blk = _Block(state, streams, rule, dt, record_steps)
    blk.run()
    return blk


def _traces_from_block(blk: _Block) -> list[PathTrace]:
    recs = blk.records
    out = []
    final = recs[-1]
    for p, stream in enumerate(blk.streams):
        times, a, trA, opA, trQV = [], [], [], [], []
        for (_, t, ra, rtr, rop, rqv, act) in recs[:-1]:
            if not act[p] and times:
                break
            times.append(t[p]); a.append(ra[p]); trA.append(rtr[p]); opA.append(rop[p]); trQV.append(rqv[p])
        _, t, ra, rtr, rop, rqv, _ = final
        if t[p] > times[-1]:
            times.append(t[p]); a.append(ra[p]); trA.append(rtr[p]); opA.append(rop[p]); trQV.append(rqv[p])
        w = np.exp(blk.logw[p])
        reason = blk.reason[p]
        fs = LocalizationState(
            float(blk.t[p]), blk.logw[p].copy(), blk.a[p].copy(), blk.A[p].copy(), blk.B[p].copy(),
            blk.qv[p].copy(), reason == "collapse", blk.atoms, float(blk.opint[p]), blk.tr_A0,
            bool(blk.singular[p]),
        )
        out.append(PathTrace(
            np.array(times), np.array(a), np.array(trA), np.array(opA), np.array(trQV),
            int(np.argmax(w)) if reason == "collapse" else None, stream.index, reason, fs,
        ))
    return out


def run(state: LocalizationState, rule: StoppingRule, dt: float = DEFAULT_DT,
        stream: _rng.Stream | int = 0, record_every: int | None = None) -> PathTrace:
    """Simulate one path from ``state`` until ``rule`` fires, collapse or the horizon."""
    stream = stream if isinstance(stream, _rng.Stream) else _rng.Stream(0, int(stream))
    if not 0 < dt <= MAX_DT:
        raise PreconditionError(f"dt must lie in (0, {MAX_DT}]")
    steps = _record_steps(dt, state.t, rule.t_max, record_every)
    blk = _Block(state, [stream], rule, dt, steps)
    try:
        blk.run()
    except TruncationError as exc:
        blk.reason[blk.active] = "budget"
        blk._snapshot(-1)
        raise TruncationError(str(exc), partial=_traces_from_block(blk)[0]) from None
    return _traces_from_block(blk)[0]


# --------------------------------------------------------------------------
# batches


@dataclass(frozen=True, eq=False)
class BatchReport:
    time_grid: np.ndarray
    mean_trA: np.ndarray
    se_trA: np.ndarray
    mean_a: np.ndarray
    se_a: np.ndarray
    t2_to_mu: list | None
    t2_bound: np.ndarray
    terminal_frequencies: np.ndarray
    terminal_probabilities: np.ndarray
    completed_by_sampling: int
    stop_reasons: dict
    tr_A0: float
    dt: float
    path_count: int
    seed: int
    stream_base: int
    singular_paths: int
    endpoints: dict = field(repr=False, default_factory=dict)

    def to_json(self) -> dict:
        return {
            "time_grid": self.time_grid.tolist(),
            "mean_trA": self.mean_trA.tolist(),
            "se_trA": self.se_trA.tolist(),
            "mean_a": self.mean_a.tolist(),
            "se_a": self.se_a.tolist(),
            "t2_to_mu": self.t2_to_mu,
            "t2_bound": self.t2_bound.tolist(),
            "terminal_frequencies": self.terminal_frequencies.tolist(),
            "terminal_probabilities": self.terminal_probabilities.tolist(),
            "completed_by_sampling": self.completed_by_sampling,
            "stop_reasons": dict(sorted(self.stop_reasons.items())),
            "tr_A0": self.tr_A0,
            "dt": self.dt,
            "path_count": self.path_count,
            "singular_paths": self.singular_paths,
            "seeds": {"seed": self.seed, "stream_base": self.stream_base},
        }


def simulate_paths(measure, rule: StoppingRule, dt: float, path_count: int, seed: int = 0,
                   stream_base: int = 0, sample_times: Sequence[float] = (),
                   record_every: int | None = None):
    """Run ``path_count`` paths; returns (blocks, record steps, initial state)."""
    if path_count < 1:
        raise InputError("path_count must be >= 1")
    if not 0 < dt <= MAX_DT:
        raise PreconditionError(f"dt must lie in (0, {MAX_DT}]")
    state = init(measure)
    steps = _record_steps(dt, 0.0, rule.t_max, record_every, sample_times)
    streams = [_rng.Stream(seed, stream_base + i) for i in range(path_count)]
    jobs = [streams[s:s + BLOCK] for s in range(0, path_count, BLOCK)]
    blocks = _rng.pmap(lambda ss: _simulate_block(state, ss, rule, dt, steps), jobs)
    return blocks, steps, state


def _gather(blocks: list[_Block], step_index: int):
    """(a, trA, opA) for all paths at record ``step_index`` (stopped paths frozen)."""
    a, tr, op = [], [], []
    for blk in blocks:
        rec = next((r for r in blk.records if r[0] == step_index), None)
        if rec is None:
            # every path of the block stopped before this record: use the final state
            rec = blk.records[-1]
        a.append(rec[2]); tr.append(rec[3]); op.append(rec[4])
    return np.concatenate(a), np.concatenate(tr), np.concatenate(op)


def batch_run(measure, rule: StoppingRule, dt: float = DEFAULT_DT, path_count: int = 1000,
              seed: int = 0, stream_base: int = 0, sample_times: Sequence[float] = (0.5, 1.0, 2.0),
              record_every: int | None = None, t2: bool | None = None,
              keep_traces: bool = True):
    """Simulate many independent paths and aggregate them.

    Returns ``(traces, report)``.  The report holds, per sample time, the
    mean of tr A_t and the exact T2 cost between the empirical law of a_t
    and the initial measure, plus the terminal-atom frequency table.
    Paths still spread over several atoms when they stop are completed by
    drawing an atom from their current weights; the weights are a
    martingale, so this keeps the terminal law exact.
    """
    if isinstance(measure, GridMeasure):
        measure = measure.to_discrete()
    sample_times = [t for t in sample_times if t <= rule.t_max + 1e-12]
    blocks, steps, state = simulate_paths(measure, rule, dt, path_count, seed, stream_base,
                                          sample_times, record_every)
    if t2 is None:
        t2 = measure.size <= 64
    mu = measure
    a0 = state.a
    grid, mtr, setr, ma, sea, t2s = [], [], [], [], [], []
    for t in sample_times:
        k = int(round(t / dt))
        a, tr, _ = _gather(blocks, k)
        grid.append(t)
        mtr.append(tr.mean())
        setr.append(tr.std(ddof=1) / math.sqrt(tr.size) if tr.size > 1 else 0.0)
        ma.append(a.mean(axis=0))
        sea.append(a.std(axis=0, ddof=1) / math.sqrt(a.shape[0]) if a.shape[0] > 1 else np.zeros(a.shape[1]))
        if t2:
            t2s.append(t2_distance(DiscreteMeasure.from_samples(a), mu, max_atoms=None))
    counts = np.zeros(measure.size, dtype=int)
    completed = 0
    reasons: dict[str, int] = {}
    singular = 0
    traces = []
    for blk in blocks:
        blk_traces = _traces_from_block(blk)
        for p, tr in enumerate(blk_traces):
            reasons[tr.stop_reason] = reasons.get(tr.stop_reason, 0) + 1
            singular += int(tr.final_state.singular)
            if tr.terminal_atom is not None:
                counts[tr.terminal_atom] += 1
            else:
                w = tr.final_state.weights
                gen = blk.streams[p].generator(2)
                counts[int(gen.choice(w.size, p=w / w.sum()))] += 1
                completed += 1
        if keep_traces:
            traces.extend(blk_traces)
    final_a = np.concatenate([blk.a for blk in blocks])
    final_qv = np.concatenate([blk.qv for blk in blocks])
    report = BatchReport(
        np.array(grid), np.array(mtr), np.array(setr), np.array(ma).reshape(len(grid), -1),
        np.array(sea).reshape(len(grid), -1), t2s if t2 else None,
        np.exp(-np.array(grid)) * state.tr_A0, counts, measure.weights.copy(), completed, reasons,
        state.tr_A0, dt, path_count, seed, stream_base, singular,
        endpoints={"a0": a0, "a": final_a, "qv": final_qv,
                   "reason": np.concatenate([blk.reason for blk in blocks]),
                   "t": np.concatenate([blk.t for blk in blocks])},
    )
    return traces, report


# --------------------------------------------------------------------------
# diagnostics


def tilt_residual(state: LocalizationState, initial: DiscreteMeasure | GridMeasure) -> float:
    """RMS residual of fitting log(f_t / f_0)(x) = c + <b, x> - 1/2 <B x, x>.

    ``B`` is fixed to the accumulated ``B_accum``; ``c`` and ``b`` are fitted
    by least squares over the atoms carrying initial mass.
    """
    if isinstance(initial, GridMeasure):
        initial = initial.to_discrete()
    if initial.atoms.shape != state.atoms.shape or not np.array_equal(initial.atoms, state.atoms):
        raise InputError("state does not belong to this initial measure")
    n = initial.dimension
    supp = initial.weights > 0
    if supp.sum() < n + 2:
        raise CapabilityError(f"need at least {n + 2} atoms with positive weight, got {supp.sum()}")
    x = initial.atoms[supp]
    target = state.log_weights[supp] - np.log(initial.weights[supp])
    target = target + 0.5 * np.einsum("mi,ij,mj->m", x, state.B_accum, x)
    design = np.hstack([np.ones((x.shape[0], 1)), x])
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    resid = target - design @ coef
    return float(np.sqrt(np.mean(resid**2)))


@dataclass(frozen=True, eq=False)
class DecayReport:
    slope: float
    intercept: float
    empirical_constant: float
    times: np.ndarray
    mean_opA: np.ndarray
    se_opA: np.ndarray
    path_count: int

    def to_json(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "empirical_constant": self.empirical_constant,
            "times": self.times.tolist(),
            "mean_opA": self.mean_opA.tolist(),
            "se_opA": self.se_opA.tolist(),
            "path_count": self.path_count,
        }


def decay_diagnostic(traces: Sequence[PathTrace], t_fit: float = 2.0) -> DecayReport:
    """Least-squares fit of log E||A_t||_op against t on the common record grid."""
    if len(traces) < 100:
        raise InputError("decay diagnostic needs at least 100 traces")
    longest = max(traces, key=lambda tr: tr.times.size)
    grid = longest.times[longest.times <= t_fit + 1e-12]
    if grid.size < 3:
        raise InputError("degenerate time grid (fewer than 3 record times)")
    vals = np.array([[tr.value_at(t, "opA") for t in grid] for tr in traces])
    mean = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / math.sqrt(len(traces))
    ok = mean > 0
    if ok.sum() < 3:
        raise InputError("operator norms vanish on the grid")
    slope, intercept = np.polyfit(grid[ok], np.log(mean[ok]), 1)
    op0 = mean[0]
    const = float(np.max(np.exp(grid) * mean / op0))
    return DecayReport(float(slope), float(intercept), const, grid, mean, se, len(traces))


@dataclass(frozen=True, eq=False)
class StoppedReport:
    theta: float
    stop_fraction: float
    stop_times: np.ndarray
    norm_means: dict
    norm_ses: dict
    increments: np.ndarray
    quadratic_variation: np.ndarray
    max_qv_ratio: float
    path_count: int
    seed: int
    stream_base: int

    def to_json(self) -> dict:
        return {
            "theta": self.theta,
            "stop_fraction": self.stop_fraction,
            "mean_stop_time": float(self.stop_times.mean()),
            "E_norm_aT": dict(sorted(self.norm_means.items())),
            "se_norm_aT": dict(sorted(self.norm_ses.items())),
            "max_qv_eig_over_theta": self.max_qv_ratio,
            "path_count": self.path_count,
            "seeds": {"seed": self.seed, "stream_base": self.stream_base},
        }


def stopped_run(measure, theta: float, dt: float = DEFAULT_DT, path_count: int = 1000,
                seed: int = 0, stream_base: int = 0, t_max: float = DEFAULT_HORIZON) -> StoppedReport:
    """Run paths until int_0^t ||A_s||_op ds reaches ``theta`` (or collapse).

    The last step is shortened so that the integral equals ``theta`` at the
    stopping time; consequently the quadratic variation ``qv_accum`` of the
    stopped barycenter satisfies qv_accum <= theta * id.
    """
    if not theta > 0:
        raise PreconditionError("theta must be > 0")
    rule = StoppingRule.threshold(theta, t_max=t_max)
    blocks, _, state = simulate_paths(measure, rule, dt, path_count, seed, stream_base)
    a = np.concatenate([blk.a for blk in blocks])
    qv = np.concatenate([blk.qv for blk in blocks])
    reason = np.concatenate([blk.reason for blk in blocks])
    t = np.concatenate([blk.t for blk in blocks])
    M = a - state.a
    norms = {"l1": np.abs(a).sum(axis=1), "l2": np.linalg.norm(a, axis=1), "linf": np.abs(a).max(axis=1)}
    means = {k: float(v.mean()) for k, v in norms.items()}
    ses = {k: float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0 for k, v in norms.items()}
    qv_max = float(np.linalg.eigvalsh(qv)[:, -1].max()) / theta if math.isfinite(theta) else 0.0
    return StoppedReport(theta, float(np.mean(reason == "threshold")), t, means, ses, M, qv, qv_max,
                         path_count, seed, stream_base)
