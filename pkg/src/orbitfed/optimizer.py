"""Per-round resource allocation: offload split, satellite frequency, bandwidth.

The round objective max_j[max(client path, satellite path) + glob] is driven
by three coupled blocks, each solved exactly given the others:

  - offload fractions: an outer bisection balances the client path against
    the satellite path in total offloaded samples A_j, with an inner min-max
    equalization distributing A_j across clients;
  - satellite frequency: the battery-constrained maximum, found by bisection
    when the work fits one coverage window and in closed form otherwise;
  - bandwidth: per-client floors from the energy budget, then bisection on
    the equalized completion value until the cluster budget is met.

A block-coordinate loop cycles the three. Because A_j changes the relay time
and hence the battery headroom, the offload block evaluates the satellite
path at the battery-optimal frequency for each trial A_j (refresh_freq=True,
the default); with refresh_freq=False it uses the frequency in hand, which
can make the descent trace non-monotone on battery-bound instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import cost
from .cost import cluster_client_path

BISECT_EPS = 1e-6
BISECT_MAX_ITER = 200
BAND_EPS = 1e-6  # bandwidth budget band (1 - eps) * B_j <= sum b <= B_j


class InfeasibleError(RuntimeError):
    """A resource block has no feasible point; carries slack diagnostics."""

    def __init__(self, message, slack=None, report=None):
        super().__init__(message)
        self.slack = slack
        self.report = report


@dataclass(frozen=True)
class DecisionVector:
    alpha: dict  # client id -> offload fraction
    sat_freq_hz: dict  # cluster id -> satellite frequency
    bandwidth_hz: dict  # client id -> uplink bandwidth slice

    def as_dict(self) -> dict:
        return {
            "alpha": {str(k): v for k, v in sorted(self.alpha.items())},
            "sat_freq_hz": {str(k): v for k, v in sorted(self.sat_freq_hz.items())},
            "bandwidth_hz": {str(k): v for k, v in sorted(self.bandwidth_hz.items())},
        }

    @staticmethod
    def from_dict(d) -> "DecisionVector":
        return DecisionVector(
            alpha={int(k): float(v) for k, v in d["alpha"].items()},
            sat_freq_hz={int(k): float(v) for k, v in d["sat_freq_hz"].items()},
            bandwidth_hz={int(k): float(v) for k, v in d["bandwidth_hz"].items()},
        )


@dataclass(frozen=True)
class BisectResult:
    x: float
    lo: float
    hi: float
    status: str  # converged | degenerate | boundary_lo | boundary_hi
    iterations: int


def bisect(f, lo: float, hi: float, eps: float = BISECT_EPS,
           max_iter: int = BISECT_MAX_ITER) -> BisectResult:
    """Locate the zero crossing of a monotone function on [lo, hi].

    When f has the same sign at both ends there is no crossing inside the
    bracket; the endpoint nearer the target is returned with a boundary flag.
    """
    if hi < lo:
        raise ValueError("bisect needs lo <= hi")
    if hi == lo:
        return BisectResult(lo, lo, hi, "degenerate", 0)
    flo = f(lo)
    fhi = f(hi)
    if flo == 0.0:
        return BisectResult(lo, lo, lo, "converged", 0)
    if fhi == 0.0:
        return BisectResult(hi, hi, hi, "converged", 0)
    if (flo < 0.0) == (fhi < 0.0):
        if abs(flo) <= abs(fhi):
            return BisectResult(lo, lo, hi, "boundary_lo", 0)
        return BisectResult(hi, lo, hi, "boundary_hi", 0)
    tol = eps * max(1.0, abs(lo), abs(hi))
    it = 0
    while hi - lo > tol and it < max_iter:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return BisectResult(mid, mid, mid, "converged", it + 1)
        if (fm < 0.0) == (flo < 0.0):
            lo, flo = mid, fm
        else:
            hi, fhi = mid, fm
        it += 1
    return BisectResult(0.5 * (lo + hi), lo, hi, "converged", it)


# ---------------------------------------------------------------------------
# per-cluster working context


class _Ctx:
    """Precomputed per-cluster arrays and cost closures."""

    def __init__(self, scenario, cluster):
        self.cluster = cluster
        self.profiles = scenario.cluster_clients(cluster.id)
        self.ids = [p.id for p in self.profiles]
        self.sizes = np.array([float(p.size) for p in self.profiles])
        self.freqs = np.array([p.cpu_freq_hz for p in self.profiles])
        self.cycles = np.array([p.cycles_per_sample for p in self.profiles])
        self.alpha_max = np.array([p.max_offload_fraction for p in self.profiles])
        self.powers = np.array([p.tx_power_w for p in self.profiles])
        self.budgets = np.array([p.energy_budget_j for p in self.profiles])
        self.T = cluster.coverage_s
        self.rate = cluster.isl_rate_bps
        self.state_bits = scenario.footprint.state_bits
        self.sample_bits = float(scenario.footprint.sample_bits)
        self.m_s = cluster.sat_cycles_per_sample
        self.f_max = cluster.sat_max_freq_hz
        self.p_s = cluster.sat_tx_power_w
        self.kappa = cluster.energy_coeff
        self.e_orig = cluster.sat_initial_energy_j
        self.psi = cluster.sat_min_residual_j
        self.p_charge = cluster.sun_power_w if cluster.sun_facing else 0.0
        self.budget_hz = cluster.bandwidth_hz
        # uplink SNR numerators p_k * d^-xi / N0
        self.snr_num = (
            self.powers * cluster.sat_distance_m ** (-cluster.pathloss_exponent)
            / cluster.noise_density_w_per_hz
        )
        self.a_cap = min(cluster.max_offload_samples, float(np.sum(self.alpha_max * self.sizes)))
        # reciprocal of per-client total work; zero for dataless clients so
        # the offload expressions stay finite (their mass is zero anyway)
        work = self.cycles * self.sizes
        self.inv_work = np.divide(1.0, work, out=np.zeros_like(work), where=work > 0)

    # --- satellite path -------------------------------------------------
    def tau_trans(self, a: float) -> float:
        return (self.state_bits + self.sample_bits * a) / self.rate

    def e_trans(self, a: float) -> float:
        return self.p_s * self.tau_trans(a)

    def n_handoffs(self, a: float, f: float) -> int:
        if a <= 0:
            return 0
        return int(math.floor(self.m_s * a / ((self.T - self.tau_trans(a)) * f)))

    def tau_rep(self, a: float, f: float) -> float:
        tau_tr = self.tau_trans(a)
        if a <= 0:
            return tau_tr
        n = self.n_handoffs(a, f)
        rem = max(self.m_s * a - n * (self.T - tau_tr) * f, 0.0)
        return self.T * n + rem / f + tau_tr

    # --- client side ----------------------------------------------------
    def tau_locals(self, alpha: np.ndarray) -> np.ndarray:
        return self.cycles * (1.0 - alpha) * self.sizes / self.freqs

    def e_locals(self, alpha: np.ndarray) -> np.ndarray:
        return self.kappa * self.cycles * (1.0 - alpha) * self.sizes * self.freqs ** 2

    def tau_agg(self, b):
        """Upload seconds for bandwidth slice(s) b (vectorized)."""
        b = np.asarray(b, dtype=float)
        rate = b * np.log2(1.0 + self.snr_num / b)
        return self.state_bits / rate

    def tau_agg_one(self, k: int, b: float) -> float:
        rate = b * math.log2(1.0 + self.snr_num[k] / b)
        return self.state_bits / rate

    def tau_agg_floor(self, k: int) -> float:
        # limit of tau_agg as b -> inf: rate tends to snr_num / ln 2
        return self.state_bits * math.log(2.0) / self.snr_num[k]

    def invert_tau_agg(self, k: int, target_s: float, b_hi: float):
        """Smallest bandwidth with tau_agg <= target, or None if unattainable."""
        if target_s <= 0:
            return None
        if self.tau_agg_one(k, b_hi) > target_s:
            return None
        b_lo = b_hi * 1e-12
        r = bisect(lambda b: self.tau_agg_one(k, b) - target_s, b_lo, b_hi)
        if r.status == "boundary_lo":
            return b_lo
        return r.hi  # feasible (tau <= target) side

    def alpha_floor(self, tau_aggs) -> np.ndarray:
        """Least offload per client that fits its energy budget at the
        given upload times. Local compute is the only knob once the slice
        is fixed, so the budget turns into a lower bound on offload."""
        e_loc0 = self.kappa * self.cycles * self.sizes * self.freqs ** 2
        head = self.budgets - self.powers * np.asarray(tau_aggs, dtype=float)
        lo = np.zeros(len(self.sizes))
        pos = e_loc0 > 0
        lo[pos] = 1.0 - head[pos] / e_loc0[pos]
        lo[~pos & (head < 0)] = math.inf  # upload alone busts the budget
        if np.any(lo > self.alpha_max + 1e-9):
            k = int(np.argmax(lo - self.alpha_max))
            raise InfeasibleError(
                f"client {self.ids[k]}: energy budget cannot be met even at "
                "full offload with its current bandwidth slice",
                slack=float(self.alpha_max[k] - lo[k]),
            )
        return np.clip(lo, 0.0, self.alpha_max)


def _contexts(scenario):
    return {c.id: _Ctx(scenario, c) for c in scenario.clusters}


# ---------------------------------------------------------------------------
# satellite frequency block (battery-limited maximum)


def _chain_residuals(ctx: _Ctx, a: float, f: float):
    """Worst per-satellite battery residual margin over the relay chain."""
    tau_tr = ctx.tau_trans(a)
    e_tr = ctx.e_trans(a)
    if a <= 0:
        return ctx.e_orig - e_tr + tau_tr * ctx.p_charge - ctx.psi
    n = ctx.n_handoffs(a, f)
    rem = max(ctx.m_s * a - n * (ctx.T - tau_tr) * f, 0.0)
    last = (
        ctx.e_orig - ctx.kappa * rem * f ** 2 - e_tr
        + (rem / f + tau_tr) * ctx.p_charge - ctx.psi
    )
    if n == 0:
        return last
    first = (
        ctx.e_orig - ctx.kappa * (ctx.T - tau_tr) * f ** 3 - e_tr
        + ctx.T * ctx.p_charge - ctx.psi
    )
    return min(first, last)


def _best_freq(ctx: _Ctx, a: float) -> float:
    """Battery-feasible frequency maximizing satellite progress for offload a."""
    tau_tr = ctx.tau_trans(a)
    if tau_tr >= ctx.T:
        raise InfeasibleError(
            f"cluster {ctx.cluster.id}: relay time {tau_tr:.3f} s exceeds the "
            f"coverage window {ctx.T:.3f} s", slack=ctx.T - tau_tr,
        )
    e_tr = ctx.e_trans(a)
    cyc = ctx.m_s * a
    if cyc <= 0:
        slack = ctx.e_orig - e_tr + tau_tr * ctx.p_charge - ctx.psi
        if slack < 0:
            raise InfeasibleError(
                f"cluster {ctx.cluster.id}: battery cannot cover the relay alone",
                slack=slack,
            )
        return ctx.f_max

    def resid_single(f):
        # single-window completion: compute cyc at f, charge over actual dwell
        return (
            ctx.e_orig - ctx.kappa * cyc * f * f - e_tr
            + (cyc / f + tau_tr) * ctx.p_charge - ctx.psi
        )

    thresh = cyc / (ctx.T - tau_tr)
    if ctx.f_max >= thresh:
        if resid_single(ctx.f_max) >= 0.0:
            return ctx.f_max
        lo_slack = resid_single(thresh)
        if lo_slack < 0.0:
            raise InfeasibleError(
                f"cluster {ctx.cluster.id}: battery short by {-lo_slack:.6g} J even "
                "at the slowest single-window frequency", slack=lo_slack,
            )
        r = bisect(resid_single, thresh, ctx.f_max)
        return r.lo  # feasible side

    # multi-window regime: full-dwell energy model, closed form
    num = ctx.e_orig - e_tr + ctx.T * ctx.p_charge - ctx.psi
    if num <= 0.0:
        raise InfeasibleError(
            f"cluster {ctx.cluster.id}: battery cannot sustain any frequency "
            "across full coverage windows", slack=num,
        )
    f = min(ctx.f_max, (num / (ctx.kappa * (ctx.T - tau_tr))) ** (1.0 / 3.0))
    worst = _chain_residuals(ctx, a, f)
    if worst < -1e-9 * max(1.0, ctx.psi):
        # charging over a shortened final dwell can undercut the full-window
        # model; refuse rather than return an infeasible frequency
        raise InfeasibleError(
            f"cluster {ctx.cluster.id}: final-satellite residual short by "
            f"{-worst:.6g} J under shortened-dwell charging", slack=worst,
        )
    return f


def battery_freq_closed_form(e_orig, e_trans, coverage_s, tau_trans_s,
                           p_charge, psi, kappa, f_max) -> float:
    """Multi-window battery-optimal frequency, closed form with clipping."""
    num = max(e_orig - e_trans + coverage_s * p_charge - psi, 0.0)
    return min(f_max, (num / (kappa * (coverage_s - tau_trans_s))) ** (1.0 / 3.0))


def solve_freq(scenario, alpha, b=None) -> dict:
    """Per-cluster battery-feasible frequency for a fixed offload vector."""
    out = {}
    for cluster in scenario.clusters:
        ctx = _Ctx(scenario, cluster)
        a = float(sum(alpha[p.id] * p.size for p in ctx.profiles))
        out[cluster.id] = _best_freq(ctx, a)
    return out


# ---------------------------------------------------------------------------
# offload block


def _equalize_local(ctx: _Ctx, a: float, lo: np.ndarray = None) -> np.ndarray:
    """Distribute offload mass a to minimize the worst client compute time."""
    if lo is None:
        lo = np.zeros(len(ctx.sizes))
    full = ctx.cycles * ctx.sizes / ctx.freqs  # tau_local at alpha = 0

    def need(nu):
        req = np.clip(1.0 - nu * ctx.freqs * ctx.inv_work, lo, ctx.alpha_max)
        return float(np.sum(req * ctx.sizes))

    hi = float(np.max(full))
    r = bisect(lambda nu: need(nu) - a, 0.0, hi)
    nu = r.hi  # feasible side: need(nu) <= a
    alpha = np.clip(1.0 - nu * ctx.freqs * ctx.inv_work, lo, ctx.alpha_max)
    return _fix_sum(ctx, alpha, a, lo)


def _fix_sum(ctx: _Ctx, alpha: np.ndarray, a: float, lo: np.ndarray = None) -> np.ndarray:
    """Nudge the profile so sum(alpha * size) hits a exactly, spreading the
    residual in proportion to each client's remaining room."""
    if lo is None:
        lo = np.zeros(len(ctx.sizes))
    alpha = alpha.copy()
    for _ in range(3):  # clipping can strand a residual sliver; re-spread
        resid = a - float(np.sum(alpha * ctx.sizes))
        if abs(resid) <= 1e-12 * max(1.0, a):
            break
        if resid < 0:
            room = np.maximum(alpha - lo, 0.0) * ctx.sizes
        else:
            room = np.maximum(ctx.alpha_max - alpha, 0.0) * ctx.sizes
        total = float(np.sum(room))
        if total <= 0:
            break
        share = np.minimum(room, room * (abs(resid) / total))
        bump = np.divide(share, ctx.sizes, out=np.zeros_like(share),
                         where=ctx.sizes > 0)
        alpha = np.clip(alpha + math.copysign(1.0, resid) * bump, lo, ctx.alpha_max)
    return alpha


def _alpha_within(ctx: _Ctx, a: float, freq: float, tau_aggs: np.ndarray) -> np.ndarray:
    """Split total offload a across the cluster to minimize the client path."""
    lo = ctx.alpha_floor(tau_aggs)
    a_floor = float(np.sum(lo * ctx.sizes))
    if a < a_floor - 1e-9 * max(1.0, a_floor):
        raise InfeasibleError(
            f"cluster {ctx.cluster.id}: client energy budgets need at least "
            f"{a_floor:.6g} offloaded samples at this split, got {a:.6g}"
        )
    a = max(a, a_floor)
    if a <= 0.0:
        return np.zeros(len(ctx.sizes))
    if a > ctx.a_cap * (1.0 + 1e-9) + 1e-9:
        raise InfeasibleError(
            f"cluster {ctx.cluster.id}: offload {a} exceeds capacity {ctx.a_cap}"
        )
    a = min(a, ctx.a_cap)
    n = ctx.n_handoffs(a, freq)
    tn = ctx.T * n

    cand = [_equalize_local(ctx, a, lo)]
    m_star = float(np.max(ctx.tau_locals(cand[0])))

    if m_star > tn:
        # straggler lands after the final chain satellite arrives: equalize
        # completion (wait-or-compute plus upload) instead of compute alone
        h = math.floor(m_star / ctx.T)
        base = ctx.T * h

        def need2(nu):
            slack = nu - tau_aggs
            if np.any(slack < base):
                return math.inf
            req = np.clip(1.0 - slack * ctx.freqs * ctx.inv_work, lo, ctx.alpha_max)
            return float(np.sum(req * ctx.sizes))

        lo = base + float(np.max(tau_aggs))
        up = float(np.max(np.maximum(base, ctx.tau_locals(cand[0])) + tau_aggs))
        if up > lo:
            r = bisect(lambda nu: (need2(nu) - a) if need2(nu) != math.inf else math.inf,
                       lo, up)
            nu2 = r.hi
            if need2(nu2) <= a:
                slack = nu2 - tau_aggs
                alpha2 = np.clip(
                    1.0 - slack * ctx.freqs * ctx.inv_work, lo, ctx.alpha_max
                )
                cand.append(_fix_sum(ctx, alpha2, a, lo))

    best = None
    best_y = math.inf
    for alpha in cand:
        y, _ = cluster_client_path(ctx.tau_locals(alpha), tau_aggs, ctx.T, n)
        if y < best_y - 1e-15:
            best, best_y = alpha, y
    return best


def solve_alpha_within_cluster(scenario, cluster_id: int, a: float, freq: float,
                               bandwidth: dict) -> dict:
    """Public per-cluster inner solver; returns client id -> alpha."""
    ctx = _Ctx(scenario, scenario.cluster(cluster_id))
    tau_aggs = np.array([ctx.tau_agg_one(k, bandwidth[pid]) for k, pid in enumerate(ctx.ids)])
    alpha = _alpha_within(ctx, a, freq, tau_aggs)
    return {pid: float(alpha[k]) for k, pid in enumerate(ctx.ids)}


def _cluster_alpha(ctx: _Ctx, freq: float, tau_aggs: np.ndarray,
                   refresh_freq: bool):
    """Choose the cluster's total offload A by balancing the two paths."""
    lo_vec = ctx.alpha_floor(tau_aggs)
    a_lo = float(np.sum(lo_vec * ctx.sizes))
    if a_lo > ctx.a_cap * (1.0 + 1e-9):
        raise InfeasibleError(
            f"cluster {ctx.cluster.id}: client energy budgets need "
            f"{a_lo:.6g} offloaded samples, above the cap {ctx.a_cap:.6g}"
        )
    a_lo = min(a_lo, ctx.a_cap)

    def freq_for(a):
        if not refresh_freq:
            return freq
        return _best_freq(ctx, a)

    def m_star(a):
        return float(np.max(ctx.tau_locals(
            _equalize_local(ctx, max(a, a_lo), lo_vec))))

    def gap(a):
        # positive while the worst client still outlasts the chain build-up
        try:
            f = freq_for(a)
        except InfeasibleError:
            return -math.inf
        return m_star(a) - ctx.T * ctx.n_handoffs(a, f)

    r = bisect(gap, a_lo, ctx.a_cap)
    a_up = r.hi if gap(r.hi) <= 0 or r.status == "boundary_hi" else r.x
    if r.status == "boundary_lo":
        a_up = a_lo
    if r.status == "boundary_hi":
        a_up = ctx.a_cap

    # balance client path against satellite path on [a_lo, a_up]
    lo, hi = a_lo, a_up
    tol = BISECT_EPS * max(1.0, a_up)
    it = 0

    def paths(a):
        try:
            f = freq_for(a)
        except InfeasibleError:
            return math.inf, math.inf, None
        alpha = _alpha_within(ctx, a, f, tau_aggs)
        n = ctx.n_handoffs(a, f)
        y, _ = cluster_client_path(ctx.tau_locals(alpha), tau_aggs, ctx.T, n)
        return y, ctx.tau_rep(a, f), f

    while hi - lo > tol and it < BISECT_MAX_ITER:
        mid = 0.5 * (lo + hi)
        y, rep, _ = paths(mid)
        if y >= rep:
            lo = mid
        else:
            hi = mid
        it += 1

    best_a, best_val = None, math.inf
    for a in (lo, 0.5 * (lo + hi), hi):
        y, rep, f = paths(a)
        val = max(y, rep)
        if val < best_val - 1e-15:
            best_a, best_val = a, val
    if best_val == math.inf:
        # no trial offload is battery-feasible; fall back to the floor
        y, rep, f = paths(a_lo)
        if f is None:
            raise InfeasibleError(
                f"cluster {ctx.cluster.id}: no battery-feasible offload level"
            )
        best_a = a_lo
    f = freq_for(best_a)
    return _alpha_within(ctx, best_a, f, tau_aggs), best_a


def solve_alpha(scenario, sat_freq: dict, bandwidth: dict,
                refresh_freq: bool = True) -> dict:
    """Per-client offload fractions balancing client and satellite paths."""
    out = {}
    for cluster in scenario.clusters:
        ctx = _Ctx(scenario, cluster)
        tau_aggs = np.array(
            [ctx.tau_agg_one(k, bandwidth[pid]) for k, pid in enumerate(ctx.ids)]
        )
        alpha, _ = _cluster_alpha(ctx, sat_freq[cluster.id], tau_aggs, refresh_freq)
        for k, pid in enumerate(ctx.ids):
            out[pid] = float(alpha[k])
    return out


# ---------------------------------------------------------------------------
# bandwidth block


def _bandwidth_cluster(ctx: _Ctx, alpha: np.ndarray, freq: float) -> np.ndarray:
    tl = ctx.tau_locals(alpha)
    m = float(np.max(tl))
    a = float(np.sum(alpha * ctx.sizes))
    n = ctx.n_handoffs(a, freq)
    e_loc = ctx.e_locals(alpha)
    k_count = len(ctx.sizes)

    b_min = np.empty(k_count)
    for k in range(k_count):
        target = (ctx.budgets[k] - e_loc[k]) / ctx.powers[k]
        if target <= 0:
            raise InfeasibleError(
                f"client {ctx.ids[k]}: energy budget {ctx.budgets[k]} J is below "
                f"its compute draw {e_loc[k]:.6g} J", slack=target,
            )
        b = ctx.invert_tau_agg(k, target, ctx.budget_hz)
        if b is None:
            raise InfeasibleError(
                f"client {ctx.ids[k]}: cannot meet the energy budget within the "
                "cluster bandwidth", slack=target - ctx.tau_agg_one(k, ctx.budget_hz),
            )
        b_min[k] = b

    x = np.zeros(k_count)
    floors = b_min.copy()
    if m > ctx.T * n:
        h = math.floor(m / ctx.T)
        deadline = ctx.T * (h + 1)
        x2 = np.maximum(ctx.T * h, tl)
        b_low = np.empty(k_count)
        ok = True
        for k in range(k_count):
            b = ctx.invert_tau_agg(k, deadline - x2[k], ctx.budget_hz)
            if b is None:
                ok = False
                break
            b_low[k] = b
        if ok:
            floors2 = np.maximum(b_min, b_low)
            if float(np.sum(floors2)) <= ctx.budget_hz:
                x = x2
                floors = floors2

    if float(np.sum(floors)) > ctx.budget_hz:
        raise InfeasibleError(
            f"cluster {ctx.cluster.id}: bandwidth floors sum to "
            f"{float(np.sum(floors)):.6g} Hz over the budget {ctx.budget_hz:.6g} Hz",
            slack=ctx.budget_hz - float(np.sum(floors)),
        )

    def alloc(nu):
        b = np.empty(k_count)
        for k in range(k_count):
            target = nu - x[k]
            bk = ctx.invert_tau_agg(k, target, ctx.budget_hz) if target > 0 else None
            b[k] = max(floors[k], bk) if bk is not None else math.inf
        return b

    nu_lo = float(np.max(x))
    nu_hi = float(np.max(x + ctx.tau_agg(floors)))
    best = alloc(nu_hi)  # all floors by construction
    if nu_hi <= nu_lo:
        return best
    lo, hi = nu_lo, nu_hi
    # the budget band is the real stop; the interval check is a backstop and
    # has to be near machine tight or the split lands visibly short of B
    tol = 1e-13 * max(1.0, nu_hi)
    it = 0
    while it < BISECT_MAX_ITER:
        mid = 0.5 * (lo + hi)
        b = alloc(mid)
        s = float(np.sum(b))
        if s > ctx.budget_hz:
            lo = mid
        else:
            best = b
            if s >= (1.0 - BAND_EPS) * ctx.budget_hz:
                break
            hi = mid
        if hi - lo <= tol:
            break
        it += 1
    return best


def solve_bandwidth(scenario, alpha: dict, sat_freq: dict) -> dict:
    """Per-client bandwidth slices equalizing completion under the budget."""
    out = {}
    for cluster in scenario.clusters:
        ctx = _Ctx(scenario, cluster)
        avec = np.array([alpha[pid] for pid in ctx.ids])
        b = _bandwidth_cluster(ctx, avec, sat_freq[cluster.id])
        for k, pid in enumerate(ctx.ids):
            out[pid] = float(b[k])
    return out


# ---------------------------------------------------------------------------
# feasibility audit


@dataclass(frozen=True)
class ConstraintCheck:
    name: str
    scope: str
    ok: bool
    slack: float
    informational: bool = False

    def as_dict(self) -> dict:
        return {
            "name": self.name, "scope": self.scope, "ok": self.ok,
            "slack": self.slack, "informational": self.informational,
        }


@dataclass(frozen=True)
class FeasibilityReport:
    checks: tuple

    @property
    def ok(self) -> bool:
        return all(c.ok or c.informational for c in self.checks)

    def failed(self):
        return [c for c in self.checks if not c.ok and not c.informational]

    def as_dict(self) -> dict:
        return {"ok": self.ok, "checks": [c.as_dict() for c in self.checks]}


def _rel_ok(slack: float, scale: float) -> bool:
    return slack >= -1e-9 * max(1.0, abs(scale))


def check_feasibility(scenario, decision, bound_value=None, bound_cap=None) -> FeasibilityReport:
    """Evaluate every operating constraint with numeric slack."""
    checks = []
    breakdown = cost.round_latency(scenario, decision)

    for p in scenario.clients:
        a = decision.alpha[p.id]
        slack = min(a, p.max_offload_fraction - a)
        checks.append(ConstraintCheck(
            "offload_fraction_range", f"client {p.id}", _rel_ok(slack, 1.0), slack))
        checks.append(ConstraintCheck(
            "retained_fraction_range", f"client {p.id}", _rel_ok(1.0 - a, 1.0), 1.0 - a))

    for cluster in scenario.clusters:
        cc = breakdown.cluster(cluster.id)
        f = decision.sat_freq_hz[cluster.id]
        slack_f = min(f, cluster.sat_max_freq_hz - f)
        checks.append(ConstraintCheck(
            "sat_freq_range", f"cluster {cluster.id}",
            _rel_ok(slack_f, cluster.sat_max_freq_hz), slack_f))

        members = scenario.cluster_clients(cluster.id)
        total_b = sum(decision.bandwidth_hz[p.id] for p in members)
        slack_b = cluster.bandwidth_hz - total_b
        checks.append(ConstraintCheck(
            "bandwidth_budget", f"cluster {cluster.id}",
            _rel_ok(slack_b, cluster.bandwidth_hz), slack_b))

        for p, e_loc, e_agg in zip(members, cc.client_local_energy_j, cc.client_agg_energy_j):
            slack_e = p.energy_budget_j - e_loc - e_agg
            checks.append(ConstraintCheck(
                "client_energy", f"client {p.id}",
                _rel_ok(slack_e, p.energy_budget_j), slack_e))

        charge = cluster.sun_power_w if cluster.sun_facing else 0.0
        residual = min(
            cluster.sat_initial_energy_j - e + d * charge
            for d, e in zip(cc.sat_dwell_s, cc.sat_energy_j)
        )
        slack_s = residual - cluster.sat_min_residual_j
        name = "sat_energy_sun" if cluster.sun_facing else "sat_energy_dark"
        checks.append(ConstraintCheck(
            name, f"cluster {cluster.id}",
            _rel_ok(slack_s, max(cluster.sat_min_residual_j, cluster.sat_initial_energy_j)),
            slack_s))

        slack_a = cluster.max_offload_samples - cc.offloaded_samples
        scale_a = cc.offloaded_samples if math.isinf(cluster.max_offload_samples) else cluster.max_offload_samples
        checks.append(ConstraintCheck(
            "offload_budget", f"cluster {cluster.id}", _rel_ok(slack_a, scale_a), slack_a))

    if bound_value is not None and bound_cap is not None:
        checks.append(ConstraintCheck(
            "convergence_bound", "global", bound_value <= bound_cap,
            bound_cap - bound_value, informational=True))

    return FeasibilityReport(checks=tuple(checks))


# ---------------------------------------------------------------------------
# block-coordinate descent


@dataclass(frozen=True)
class OptimizeResult:
    decision: DecisionVector
    trace: tuple  # (stage, iteration, tau_round_s)
    report: FeasibilityReport
    iterations: int

    def trace_values(self):
        return [t[2] for t in self.trace]

    def as_dict(self) -> dict:
        return {
            "decision": self.decision.as_dict(),
            "trace": [list(t) for t in self.trace],
            "feasible": self.report.ok,
            "iterations": self.iterations,
        }


def default_init(scenario) -> DecisionVector:
    """Half-max offload (projected into the cluster cap), battery-max
    frequency at that offload, equal bandwidth split."""
    alpha = {}
    for cluster in scenario.clusters:
        ctx = _Ctx(scenario, cluster)
        base = ctx.alpha_max * 0.5
        total = float(np.sum(base * ctx.sizes))
        if total > cluster.max_offload_samples > 0:
            base = base * (cluster.max_offload_samples / total)
        elif cluster.max_offload_samples == 0:
            base = base * 0.0
        share = cluster.bandwidth_hz / len(ctx.ids)
        tau_eq = np.array([ctx.tau_agg_one(k, share) for k in range(len(ctx.ids))])
        try:
            base = np.maximum(base, ctx.alpha_floor(tau_eq))
        except InfeasibleError:
            pass  # equal split can't cover some budget; later blocks resolve it
        for k, pid in enumerate(ctx.ids):
            alpha[pid] = float(base[k])
    freq = solve_freq(scenario, alpha)
    bandwidth = {}
    for cluster in scenario.clusters:
        members = scenario.cluster_clients(cluster.id)
        share = cluster.bandwidth_hz / len(members)
        for p in members:
            bandwidth[p.id] = share
    return DecisionVector(alpha=alpha, sat_freq_hz=freq, bandwidth_hz=bandwidth)


def _tau(scenario, decision) -> float:
    return cost.round_latency(scenario, decision).tau_round_s


def _client_energy_ok(scenario, alpha, bandwidth) -> bool:
    for cluster in scenario.clusters:
        ctx = _Ctx(scenario, cluster)
        avec = np.array([alpha[pid] for pid in ctx.ids])
        e_loc = ctx.e_locals(avec)
        for k, pid in enumerate(ctx.ids):
            e_agg = ctx.powers[k] * ctx.tau_agg_one(k, bandwidth[pid])
            if e_loc[k] + e_agg > ctx.budgets[k] * (1.0 + 1e-12):
                return False
    return True


def optimize(scenario, iters: int = 10, init: DecisionVector = None,
             refresh_freq: bool = True, rtol: float = 1e-6) -> OptimizeResult:
    """Cycle the three blocks, keeping the incumbent when a block candidate
    does not strictly improve the exact round time."""
    decision = init if init is not None else default_init(scenario)
    trace = [("init", 0, _tau(scenario, decision))]

    for i in range(iters):
        tau_before = trace[-1][2]

        # offload block (with its coupled frequency in refresh mode)
        alpha_new = solve_alpha(
            scenario, decision.sat_freq_hz, decision.bandwidth_hz, refresh_freq
        )
        freq_new = solve_freq(scenario, alpha_new) if refresh_freq else decision.sat_freq_hz
        candidate = DecisionVector(alpha_new, freq_new, decision.bandwidth_hz)
        if _tau(scenario, candidate) <= trace[-1][2]:
            decision = candidate
        trace.append(("alpha", i, _tau(scenario, decision)))

        # frequency block
        freq2 = solve_freq(scenario, decision.alpha)
        candidate = DecisionVector(decision.alpha, freq2, decision.bandwidth_hz)
        if _tau(scenario, candidate) <= trace[-1][2]:
            decision = candidate
        trace.append(("freq", i, _tau(scenario, decision)))

        # bandwidth block
        b_new = solve_bandwidth(scenario, decision.alpha, decision.sat_freq_hz)
        candidate = DecisionVector(decision.alpha, decision.sat_freq_hz, b_new)
        tau_cand = _tau(scenario, candidate)
        incumbent_ok = _client_energy_ok(scenario, decision.alpha, decision.bandwidth_hz)
        if tau_cand <= trace[-1][2] or not incumbent_ok:
            decision = candidate
        trace.append(("bandwidth", i, _tau(scenario, decision)))

        if tau_before - trace[-1][2] <= rtol * max(1.0, tau_before):
            break

    report = check_feasibility(scenario, decision)
    return OptimizeResult(
        decision=decision, trace=tuple(trace), report=report,
        iterations=trace[-1][1] + 1 if iters else 0,
    )


def optimize_pinned_alpha(scenario, alpha: dict) -> DecisionVector:
    """Best frequency and bandwidth for a fixed offload vector (baselines)."""
    for p in scenario.clients:
        a = alpha[p.id]
        if a < -1e-12 or a > p.max_offload_fraction + 1e-12:
            raise InfeasibleError(
                f"client {p.id}: pinned offload {a} outside [0, {p.max_offload_fraction}]"
            )
    freq = solve_freq(scenario, alpha)
    bandwidth = solve_bandwidth(scenario, alpha, freq)
    return DecisionVector(alpha=dict(alpha), sat_freq_hz=freq, bandwidth_hz=bandwidth)


# ---------------------------------------------------------------------------
# brute-force comparator for small instances


def grid_search_cluster(scenario, alpha_step: float = 1e-3, tau_table_points: int = 3000):
    """Exhaustive offload-profile search for a single-cluster scenario.

    The offload profile is enumerated on a per-client alpha lattice. For each
    profile the two inner minimizations are independent: the satellite path
    wants the largest battery-feasible frequency, and the client path wants
    the bandwidth split that equalizes per-client completion. Returns
    (tau_round_s, DecisionVector). Intended for <= 3 clients.
    """
    if len(scenario.clusters) != 1:
        raise ValueError("grid comparator works on single-cluster scenarios")
    cluster = scenario.clusters[0]
    ctx = _Ctx(scenario, cluster)
    k_count = len(ctx.sizes)
    if k_count > 3:
        raise ValueError("grid comparator is for at most 3 clients")

    axes = [np.arange(0.0, ctx.alpha_max[k] + alpha_step / 2, alpha_step)
            for k in range(k_count)]
    mesh = np.meshgrid(*axes, indexing="ij")
    alphas = np.stack([m.ravel() for m in mesh], axis=1)  # (P, K)
    a_vec = alphas @ ctx.sizes
    keep = a_vec <= ctx.a_cap * (1.0 + 1e-12)
    alphas = alphas[keep]
    a_vec = a_vec[keep]

    # --- satellite-path inner minimum per distinct offload total ---------
    size_gcd = math.gcd(*[int(round(s)) for s in ctx.sizes]) if k_count > 1 else int(round(ctx.sizes[0]))
    quant = alpha_step * size_gcd
    a_idx = np.rint(a_vec / quant).astype(np.int64)
    uniq_idx, inverse = np.unique(a_idx, return_inverse=True)
    uniq_a = uniq_idx * quant

    best_rep = np.empty(len(uniq_a))
    best_f = np.empty(len(uniq_a))
    for i, a in enumerate(uniq_a):
        f = _best_freq(ctx, float(a))
        if ctx.n_handoffs(float(a), f) != 0:
            raise ValueError("grid comparator expects single-window instances")
        best_rep[i] = ctx.tau_rep(float(a), f)
        best_f[i] = f
    rep_of_point = best_rep[inverse]

    # --- client-path inner minimum per profile ---------------------------
    # tabulate tau_agg(b) per client on a log grid for fast inversion
    b_grid = np.geomspace(ctx.budget_hz * 1e-9, ctx.budget_hz, tau_table_points)
    tau_tables = [ctx.state_bits / (b_grid * np.log2(1.0 + ctx.snr_num[k] / b_grid))
                  for k in range(k_count)]

    def invert(k, targets):
        # smallest tabulated b with tau <= target; inf when unattainable
        table = tau_tables[k][::-1]
        bs = b_grid[::-1]
        pos = np.searchsorted(table, targets, side="right")
        out = np.full(targets.shape, math.inf)
        ok = pos > 0
        out[ok] = bs[np.minimum(pos[ok] - 1, len(bs) - 1)]
        return out

    e_loc = ctx.kappa * ctx.cycles * (1.0 - alphas) * ctx.sizes * ctx.freqs ** 2  # (P, K)
    b_min = np.empty_like(e_loc)
    for k in range(k_count):
        targets = (ctx.budgets[k] - e_loc[:, k]) / ctx.powers[k]
        if np.any(targets <= 0):
            raise InfeasibleError("grid instance has an unmeetable client energy budget")
        b_min[:, k] = invert(k, targets)
    if np.any(np.isinf(b_min)) or np.any(b_min.sum(axis=1) > ctx.budget_hz):
        raise InfeasibleError("grid instance has an unmeetable client energy budget")
    tau_at_floor = np.empty_like(b_min)
    for k in range(k_count):
        tau_at_floor[:, k] = ctx.state_bits / (
            b_min[:, k] * np.log2(1.0 + ctx.snr_num[k] / b_min[:, k])
        )

    tl = ctx.cycles * (1.0 - alphas) * ctx.sizes / ctx.freqs  # (P, K)
    m = tl.max(axis=1)
    h = np.floor(m / ctx.T)
    base = ctx.T * h
    x = np.maximum(base[:, None], tl)  # (P, K)

    lo = x.max(axis=1)
    hi = (x + tau_at_floor).max(axis=1)
    best_alloc_sum_ok = None
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        need = np.empty_like(b_min)
        for k in range(k_count):
            need[:, k] = invert(k, mid - x[:, k])
        need = np.maximum(need, b_min)
        total = need.sum(axis=1)
        feas = total <= ctx.budget_hz
        hi = np.where(feas, mid, hi)
        lo = np.where(feas, lo, mid)
    val2 = hi  # equalized completion of the straggler path

    deadline = ctx.T * (h + 1.0)
    # when the equalized completion misses the serving window, uploads wait
    # for the next satellite and the upload targets are re-equalized
    tagg_min_lo = np.array([ctx.tau_agg_floor(k) for k in range(k_count)]).max()
    lo3 = np.zeros(len(alphas)) + tagg_min_lo
    hi3 = tau_at_floor.max(axis=1)
    for _ in range(60):
        mid = 0.5 * (lo3 + hi3)
        need = np.empty_like(b_min)
        for k in range(k_count):
            need[:, k] = invert(k, mid)
        need = np.maximum(need, b_min)
        feas = need.sum(axis=1) <= ctx.budget_hz
        hi3 = np.where(feas, mid, hi3)
        lo3 = np.where(feas, lo3, mid)
    val3 = deadline + hi3

    case1 = m <= 0.0
    y = np.where(case1, hi3, np.where(val2 <= deadline, val2, val3))

    total = cluster.sync_delay_s + np.maximum(y, rep_of_point) + cluster.glob_delay_s

    # the tabulated upload inversion carries ~table-step error, so re-score
    # the leading candidates exactly before declaring a winner
    table_min = float(np.min(total))
    near = np.flatnonzero(total <= table_min * (1.0 + 0.01))
    if len(near) > 400:
        near = near[np.argsort(total[near])[:400]]

    best_exact, best_decision = math.inf, None
    freq_cache = {}
    for idx in near:
        alpha_pt = {pid: float(alphas[idx, k]) for k, pid in enumerate(ctx.ids)}
        f_pt = float(best_f[inverse[idx]])
        freq_map = {cluster.id: f_pt}
        b_map = solve_bandwidth(scenario, alpha_pt, freq_map)
        decision = DecisionVector(alpha=alpha_pt, sat_freq_hz=freq_map, bandwidth_hz=b_map)
        tau = _tau(scenario, decision)
        if tau < best_exact:
            best_exact, best_decision = tau, decision
    if best_exact > table_min * (1.0 + 0.03):
        raise AssertionError(
            f"grid comparator internal mismatch: exact {best_exact} vs table {table_min}"
        )
    return best_exact, best_decision
