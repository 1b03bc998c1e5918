"""Command line driver: build, analyze, verify, report."""
import argparse
import json
import sys

from .harness import ALL_CHECKS, FAMILIES, Scenario, build_family, emit_report, run_scenarios

DEFAULTS = {"family": "doubled_triangle", "params": {}, "tol": 1e-4, "out": None, "seed": 0,
            "eps": 0.4, "checks": None, "workers": 1, "bubbling": None}


def parse_params(text: str | None) -> dict:
    """'k=v,k=v' with numeric values where they parse."""
    out = {}
    if not text:
        return out
    for item in text.split(","):
        if not item.strip():
            continue
        k, sep, v = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"bad parameter {item!r}, expected k=v")
        v = v.strip()
        try:
            out[k.strip()] = json.loads(v)
        except json.JSONDecodeError:
            out[k.strip()] = v
    return out


def _parser():
    p = argparse.ArgumentParser(prog="spherecone", description=__doc__)
    p.add_argument("verb", choices=["build", "analyze", "verify", "report"])
    p.add_argument("input", nargs="?", help="report file for the report verb")
    p.add_argument("--config", help="JSON file with the same keys as the flags")
    p.add_argument("--family", choices=FAMILIES)
    p.add_argument("--params", type=parse_params)
    p.add_argument("--tol", type=float)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--eps", type=float, help="epsilon of the systole inequality")
    p.add_argument("--checks", help="comma separated subset of " + ",".join(ALL_CHECKS))
    p.add_argument("--bubbling", help="r0,r1 of an explicit bubbling decomposition")
    p.add_argument("--workers", type=int)
    return p


def resolve(args) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg = dict(DEFAULTS)
    if args.config:
        with open(args.config) as fh:
            cfg.update(json.load(fh))
    for k in DEFAULTS:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    if isinstance(cfg["checks"], str):
        cfg["checks"] = tuple(c for c in cfg["checks"].split(",") if c)
    if isinstance(cfg["bubbling"], str):
        cfg["bubbling"] = tuple(float(x) for x in cfg["bubbling"].split(","))
    return cfg


def _scenarios(cfg):
    entries = cfg.get("scenarios") or [{}]
    out = []
    for i, e in enumerate(entries):
        c = dict(cfg)
        c.update(e)
        bub = tuple(c["bubbling"]) if c.get("bubbling") else None
        chk = tuple(c["checks"]) if c.get("checks") else None
        out.append(Scenario(c.get("name", f"{c['family']}-{i}"), c["family"], dict(c["params"]), chk,
                            float(c["tol"]), int(c["seed"]), float(c["eps"]), bub))
    return out


def _write(doc, path):
    text = json.dumps(doc, indent=2, sort_keys=True)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.verb == "report":
        src = args.input or args.out
        if not src:
            print("report needs a report file", file=sys.stderr)
            return 2
        with open(src) as fh:
            doc = json.load(fh)
        bad = 0
        for r in doc.get("reports", []):
            for c in r["checks"]:
                bad += not c["passed"]
                mark = "PASS" if c["passed"] else "FAIL"
                print(f"{mark} {r['scenario']['name']}: {c['name']} measured={c['measured']} "
                      f"{c['relation']} bound={c['bound']}")
        return 1 if bad else 0
    cfg = resolve(args)
    scs = _scenarios(cfg)
    if args.verb == "build":
        docs = []
        for sc in scs:
            s = build_family(sc.family, sc.params)
            docs.append({"name": sc.name, "family": sc.family, "params": sc.params, "V": s.V, "F": s.F,
                         "genus": s.genus, "chi_dot": s.chi_dot, "theta": [float(x) for x in s.theta],
                         "area": s.area})
        _write({"surfaces": docs}, cfg["out"])
        return 0
    reports = run_scenarios(scs, int(cfg["workers"]))
    if args.verb == "analyze":
        _write({"values": [dict(name=r.scenario.name, **r.to_dict()["values"]) for r in reports]}, cfg["out"])
        return 0
    return emit_report(reports, cfg["out"])


if __name__ == "__main__":
    sys.exit(main())
