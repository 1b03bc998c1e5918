"""Scenario builder and verification driver."""
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field as dfield

import numpy as np

from . import cone_surface as cs
from .conformal_bounds import appendix_ext_bracket
from .errors import DomainError, NearCriticalLevel, NeedsRefinement, SaddleInInterval, UnknownFamily
from .geodesics import build_field
from .monodromy_nb import nb_parameter, standard_set
from .systole import compute_systole
from .voronoi import cylinder_regions, epsilon_bubbling, extract_complex, max_voronoi

SCHEMA_VERSION = 1
FAMILIES = ("doubled_triangle", "bigon_genus_g", "appendix_family", "lune_double")


# ---------------------------------------------------------------------------
# families


def _triangle_angles(params):
    if "eps" in params:
        e = float(params["eps"])
        return (math.pi / 3, math.pi / 3 + e, math.pi / 3 + e)
    return tuple(math.pi * float(params.get(k, 0.5)) for k in ("a", "b", "c"))


def build_family(name: str, params: dict | None = None) -> cs.ConeSurface:
    """Named example surfaces.

    doubled_triangle: corner angles pi*(a, b, c), or (pi/3, pi/3 + eps, pi/3 + eps)
    when eps is given.  bigon_genus_g: g, theta.  appendix_family: N, m, eps.
    lune_double: theta.
    """
    p = dict(params or {})
    if name == "doubled_triangle":
        return cs.double_triangle(_triangle_angles(p))
    if name == "bigon_genus_g":
        return cs.bigon_glue(int(p.get("g", 1)), float(p.get("theta", 0.5)))
    if name == "appendix_family":
        return cs.appendix_family(int(p.get("N", 0)), int(p.get("m", 2)), float(p.get("eps", 1e-3)))
    if name == "lune_double":
        return cs.lune_double(float(p.get("theta", 0.5)))
    raise UnknownFamily(name)


def ground_truth(name: str, params: dict | None = None) -> dict:
    """Quantities fixed by the construction."""
    p = dict(params or {})
    if name == "appendix_family":
        N, m, eps = int(p.get("N", 0)), int(p.get("m", 2)), float(p.get("eps", 1e-3))
        norm = 2 * N + 2.5 + m
        e = eps / (4 * math.pi * norm)
        # the shortest arc joins x1 to y_m and has length e^m
        return {"theta_norm": norm, "e": e, "shortest_arc": e ** m, "sys": e ** m / 2}
    if name == "doubled_triangle":
        a = _triangle_angles(p)
        return {"theta": [x / math.pi for x in a], "area": 2 * (sum(a) - math.pi)}
    if name == "bigon_genus_g":
        g, th = int(p.get("g", 1)), float(p.get("theta", 0.5))
        return {"theta": [th + 2 * g - 1], "genus": g}
    if name == "lune_double":
        th = float(p.get("theta", 0.5))
        return {"theta": [th, th], "area": 4 * math.pi * th, "nb": 0.0}
    raise UnknownFamily(name)


# ---------------------------------------------------------------------------
# pigeonhole


def pigeonhole_delta(r: float, t: float, N: int, values=()) -> float:
    """delta in (r, t) with [t delta, delta] inside (r, t) and free of the values.

    The N - 1 disjoint intervals [t d_k, d_k] with d_k = (t - eta)^(k+1),
    k = 0..N-2, fit in (r, t) once t (t - eta)^(N-1) > r, which a small eta
    achieves because r < t^N.  At most N - 2 values meet them.
    """
    if N < 2 or int(N) != N:
        raise DomainError("N must be an integer >= 2")
    if not (0.0 < r < t < 1.0):
        raise DomainError("need 0 < r < t < 1")
    if not r < t ** N:
        raise DomainError("need r < t^N")
    vals = [float(v) for v in values if r <= v <= t]
    if len(vals) > N - 2:
        raise DomainError("at most N - 2 values allowed in [r, t]")
    eta = 0.5 * (t - (r / t) ** (1.0 / (N - 1)))
    for k in range(N - 1):
        d = (t - eta) ** (k + 1)
        if not any(t * d <= v <= d for v in vals):
            return d
    raise AssertionError("pigeonhole search failed")


def pigeonhole_ok(r, t, delta, values) -> bool:
    return r < t * delta < delta < t and not any(t * delta <= v <= delta for v in values)


# ---------------------------------------------------------------------------
# reports


def _num(x):
    if isinstance(x, (np.floating, np.integer)):
        x = x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


@dataclass
class Check:
    name: str
    passed: bool
    measured: object
    bound: object
    relation: str
    tol: float = 0.0
    note: str = ""

    def to_dict(self):
        d = asdict(self)
        d["passed"] = bool(self.passed)
        d["measured"] = _jsonable(self.measured)
        d["bound"] = _jsonable(self.bound)
        return d


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in x]
    return _num(x)


@dataclass
class Scenario:
    name: str
    family: str
    params: dict = dfield(default_factory=dict)
    checks: tuple | None = None
    tol: float = 1e-4
    seed: int = 0
    eps: float = 0.4
    bubbling: tuple | None = None


@dataclass
class Report:
    scenario: Scenario
    checks: list = dfield(default_factory=list)
    values: dict = dfield(default_factory=dict)
    timing: dict = dfield(default_factory=dict)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def add(self, name, passed, measured, bound, relation, tol=0.0, note=""):
        self.checks.append(Check(name, bool(passed), measured, bound, relation, tol, note))

    def to_dict(self):
        return {
            "scenario": _jsonable(asdict(self.scenario)),
            "passed": self.passed,
            "checks": [c.to_dict() for c in self.checks],
            "values": _jsonable(self.values),
            "timing": _jsonable(self.timing),
        }


def emit_report(reports, path=None) -> int:
    """Write versioned JSON; returns the exit code (1 iff any check failed)."""
    reports = list(reports)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "generated_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "passed": all(r.passed for r in reports),
        "reports": [r.to_dict() for r in reports],
    }
    text = json.dumps(doc, indent=2, sort_keys=True)
    if path is None or str(path) == "-":
        print(text)
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return 0 if doc["passed"] else 1


def strip_volatile(doc: dict) -> dict:
    """Copy of a report document without timestamps and runtimes."""
    d = json.loads(json.dumps(doc))
    d.pop("generated_at", None)
    for r in d.get("reports", []):
        r.pop("timing", None)
    return d


# ---------------------------------------------------------------------------
# systole inequality


def _saddle_windows(values, sys, t, vmax):
    """Deltas with sys < t delta < delta < min(max V, pi/2) and no value in [t delta, delta].

    One delta per saddle gap wide enough, placed log-centred in the gap.
    """
    cap = min(vmax, math.pi / 2)
    vs = sorted(v for v in values if v > 0)
    cuts = sorted(set([sys] + [v for v in vs if sys < v < cap] + [cap]))
    return [math.sqrt(lo * hi / t) for lo, hi in zip(cuts, cuts[1:]) if lo / hi < t]


def run_systole_inequality(s, field=None, eps: float = 0.4, complex=None, bubbling=None, tol: float = 1e-4) -> Report:
    """Systole inequality logic on one surface.

    Hypotheses of the long-cylinder corollary: sys < t^(1 - 3 chi) with
    t = eps / (4 pi |theta|_1), and NB >= eps.  When both hold, delta comes
    from the pigeonhole lemma and an essential cylinder must sit in
    V^{-1}[t delta, delta].  Independently, any saddle-free window
    [t delta, delta] above sys without essential cylinders forces a
    (3 eps / 5)-bubbling, so NB < 3 eps / 5 must hold there.  When bubbling
    = (r0, r1) is given, an explicit bubbling decomposition is built and
    NB < its parameter is checked.
    """
    if not s.chi_dot < 0:
        raise DomainError("need chi(S dot) < 0")
    if s.genus == 0 and s.n == 3:
        raise DomainError("three-punctured sphere excluded")
    if not (0.0 < eps < 0.5):
        raise DomainError("eps must lie in (0, 1/2)")
    rep = Report(Scenario("systole_inequality", "custom", {}, eps=eps, bubbling=bubbling, tol=tol))
    f = field or build_field(s)
    cx = complex or extract_complex(s, f, check=False)
    chi = s.chi_dot
    norm = s.theta_norm
    sysr = compute_systole(s, f)
    sys = sysr.sys
    nb = nb_parameter(s.theta, chi).value
    t = eps / (4 * math.pi * norm)
    thr = t ** (1 - 3 * chi)
    svals = sorted(p.value for p in cx.saddles)
    vmax = max_voronoi(f, cx, tol)
    rep.values.update(sys=sys, nb=nb, t=t, threshold=thr, saddle_values=svals, max_v=vmax, eps=eps)
    small = sys < thr
    if small and nb >= eps:
        delta = pigeonhole_delta(sys, t, 1 - 3 * chi, [v for v in svals if v > sys])
        rep.values["delta"] = delta
        rep.add("pigeonhole_window", pigeonhole_ok(sys, t, delta, svals), [t * delta, delta], svals, "window free of saddle values")
        cyl = cylinder_regions(s, f, t * delta, delta, cx, tol=min(tol, 1e-3 * t * delta))
        ess = [c for c in cyl if c.kind == "cylinder" and c.essential]
        rep.add("essential_cylinder", bool(ess), len(ess), 1, ">=", note="branch: small systole and NB >= eps")
    elif small:
        rep.add("theorem_c", True, nb, eps, "<", note="NB below eps: inequality not required")
    else:
        rep.add("theorem_c", True, sys, thr, ">=", note="sys above threshold")
    windows = []
    for delta in _saddle_windows(svals, sys, t, vmax):
        w = {"window": [t * delta, delta]}
        windows.append(w)
        try:
            # regularity is judged at the scale of the window
            cyl = cylinder_regions(s, f, t * delta, delta, cx, tol=min(tol, 1e-3 * t * delta))
        except (SaddleInInterval, NearCriticalLevel, NeedsRefinement) as exc:
            w["unresolved"] = str(exc)
            continue
        ess = [c for c in cyl if c.kind == "cylinder" and c.essential]
        w["essential"] = len(ess)
        w["moduli"] = [c.modulus for c in cyl]
        if ess:
            rep.add("window_branch", True, len(ess), 1, ">=", note=f"essential cylinder in [{t * delta:.3e}, {delta:.3e}]")
        else:
            rep.add("window_branch", nb < 0.6 * eps, nb, 0.6 * eps, "<",
                    note=f"no essential cylinder in [{t * delta:.3e}, {delta:.3e}]: (3 eps / 5)-bubbling")
    rep.values["windows"] = windows
    if bubbling is not None:
        r0, r1 = bubbling
        bd = epsilon_bubbling(s, f, r0, r1, cx)
        rep.values.update(bubbling_eps=bd.eps, core_area=bd.core.core_area)
        rep.add("bubbling_nb", bd.nb < bd.eps, bd.nb, bd.eps, "<", note="epsilon-bubbling forces NB < epsilon")
        if bd.eps <= 0.6 * eps:
            rep.add("bubbling_vs_eps", nb < eps, nb, eps, "<", note="(3 eps / 5)-bubbling branch")
    return rep


# ---------------------------------------------------------------------------
# scenario pipeline

ALL_CHECKS = ("gauss_bonnet", "systole", "nb", "voronoi", "monodromy", "systole_inequality", "ground_truth", "sampled")


def _applicable(name, s):
    if name == "voronoi":
        return s.chi_dot < 0
    if name == "monodromy":
        return s.genus == 0 and not s.has_boundary
    if name == "systole_inequality":
        return s.chi_dot < 0 and not (s.genus == 0 and s.n == 3)
    return True


def analyze(sc: Scenario) -> Report:
    """Build the scenario's surface and run its checks."""
    t0 = time.perf_counter()
    s = build_family(sc.family, sc.params)
    rep = Report(sc)
    rep.timing["build"] = time.perf_counter() - t0
    checks = sc.checks or ALL_CHECKS
    chi, norm = s.chi_dot, s.theta_norm
    rep.values.update(n=s.n, genus=s.genus, chi_dot=chi, theta=list(map(float, s.theta)), theta_norm=norm)
    f = cx = sysr = None

    def need_field():
        nonlocal f
        if f is None:
            t = time.perf_counter()
            f = build_field(s)
            rep.timing["field"] = time.perf_counter() - t
        return f

    def need_complex():
        nonlocal cx
        if cx is None:
            cx = extract_complex(s, need_field(), check=False)
        return cx

    for name in checks:
        if name not in ALL_CHECKS:
            raise DomainError(f"unknown check {name}")
        if not _applicable(name, s):
            continue
        t = time.perf_counter()
        if name == "gauss_bonnet":
            want = 2 * math.pi * (chi + norm)
            rep.add("gauss_bonnet", abs(s.area - want) < 1e-8, s.area, want, "==", 1e-8)
        elif name == "systole":
            sysr = compute_systole(s, need_field())
            rep.values["sys"] = sysr.sys
            rep.values["sys_realizer"] = list(sysr.realizer)
            if not s.has_boundary:
                b = math.pi * float(min(s.theta))
                rep.add("sys_le_pi_min_theta", sysr.sys <= b + 1e-9, sysr.sys, b, "<=", 1e-9)
                rep.add("sys_le_half_pi", sysr.sys <= math.pi / 2 + 1e-9, sysr.sys, math.pi / 2, "<=", 1e-9)
        elif name == "nb":
            r = nb_parameter(s.theta, chi)
            rep.values["nb"] = r.value
            chis = chi + norm
            if chis <= 0:
                rep.add("nb_branch_nonpositive", abs(r.value + chis) < 1e-12, r.value, -chis, "==", 1e-12)
            else:
                rep.add("nb_branch_positive", r.value <= 1 + 1e-12, r.value, 1.0, "<=", 1e-12)
        elif name == "voronoi":
            c = need_complex()
            inv = c.check_invariants()
            for key in ("delaunay_morse", "saddle_count"):
                val, bnd, ok = inv[key]
                rep.add(f"voronoi_{key}", ok, val, bnd, "==" if key == "delaunay_morse" else "<=")
            if sysr is None:
                sysr = compute_systole(s, need_field())
            mc = c.min_positive_critical_value()
            rep.add("voronoi_min_critical_is_sys", abs(mc - sysr.sys) < 2 * sc.tol, mc, sysr.sys, "==", 2 * sc.tol)
        elif name == "monodromy":
            q = standard_set(s)
            d = q.product_defect()
            rep.add("monodromy_product", d < 1e-8, d, 0.0, "==", 1e-8)
        elif name == "systole_inequality":
            sr = run_systole_inequality(s, need_field(), sc.eps, need_complex(), sc.bubbling, sc.tol)
            rep.checks.extend(sr.checks)
            rep.values["systole_inequality"] = sr.values
        elif name == "ground_truth":
            gt = ground_truth(sc.family, sc.params)
            rep.values["ground_truth"] = gt
            if "sys" in gt:
                if sysr is None:
                    sysr = compute_systole(s, need_field())
                rel = abs(sysr.sys - gt["sys"]) / gt["sys"]
                rep.add("ground_truth_sys", rel < 1e-6, sysr.sys, gt["sys"], "==", 1e-6, "relative")
            if "area" in gt:
                rep.add("ground_truth_area", abs(s.area - gt["area"]) < 1e-8, s.area, gt["area"], "==", 1e-8)
            if sc.family == "appendix_family":
                th1 = float(s.theta[0])
                m = int(sc.params.get("m", 2))
                rep.values["ext_bracket"] = [asdict(appendix_ext_bracket(th1, gt["e"], max(m, 1)))]
        elif name == "sampled":
            rng = np.random.default_rng(sc.seed)
            bad = 0
            for _ in range(50):
                N = int(rng.integers(2, 8))
                tt = float(rng.uniform(0.05, 0.9))
                r = tt ** N * float(rng.uniform(0.01, 0.99))
                vals = rng.uniform(r, tt, size=int(rng.integers(0, N - 1)))
                d = pigeonhole_delta(r, tt, N, vals)
                bad += not pigeonhole_ok(r, tt, d, vals)
            rep.add("sampled_pigeonhole", bad == 0, bad, 0, "==")
        rep.timing[name] = time.perf_counter() - t
    return rep


def run_scenarios(scenarios, workers: int = 1):
    scenarios = list(scenarios)
    if workers <= 1 or len(scenarios) <= 1:
        return [analyze(sc) for sc in scenarios]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(analyze, scenarios))
