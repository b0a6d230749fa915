"""Command line: check, run, verify and report."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io
from .arithmetic import diophantine_check
from .kam import REPORT_COLUMNS, KamError, KamParams, reducible_pair, run, run_gates
from .torus_fn import TorusMatFn, algebra_membership, gevrey_upper_bound, matrix_in_algebra

ARTIFACTS = ("Z", "Abar", "Fbar", "F_eps", "Psi", "Psi_inv")
_PARAM_FIELDS = ("mode", "c_N", "max_band", "taylor_tol", "target_eps", "max_steps", "eps0",
                 "decay_factor")


def _canonical_sign(m):
    m = [int(x) for x in m]
    for x in m:
        if x:
            return tuple(m) if x > 0 else tuple(-y for y in m)
    return tuple(m)


def _params(cfg: io.ProblemConfig, args=None) -> KamParams:
    kw = {k: cfg.params[k] for k in _PARAM_FIELDS if k in cfg.params}
    unknown = set(cfg.params) - set(_PARAM_FIELDS)
    if unknown:
        raise io.ConfigError(f"params: unknown field(s) {', '.join(sorted(unknown))}")
    if args is not None:
        for name in ("mode", "target_eps", "max_steps"):
            v = getattr(args, name, None)
            if v is not None:
                kw[name] = v
    if "max_steps" in kw:
        kw["max_steps"] = int(kw["max_steps"])
    return KamParams(dd=cfg.dd, group=cfg.group, r=cfg.r, **kw)


def findings(cfg: io.ProblemConfig, p: KamParams) -> list[tuple[bool, str]]:
    """All preflight checks as (passed, message)."""
    out = []
    N = max(2.0, float(p.max_band))
    rep = diophantine_check(cfg.dd, N)
    if rep.passed:
        out.append((True, f"Diophantine condition up to |m| <= {N:g}: margin {rep.margin:.6g}"))
    else:
        m = _canonical_sign(rep.violations[0][0].half())
        out.append((False, f"Diophantine condition fails: resonance m={m} "
                           f"(|<m,omega>| = {rep.violations[0][1]:.3g} < {rep.violations[0][2]:.3g})"))
    ok, v = matrix_in_algebra(cfg.A, cfg.group)
    out.append((ok, f"A in {cfg.group.algebra}: violation {v:.3g}"))
    ok, v = algebra_membership(cfg.F, cfg.group)
    out.append((ok, f"F in {cfg.group.algebra}: violation {v:.3g}"))
    if cfg.F.is_integral:
        out.append((True, "periodicity: F is defined on T^d (integer frequencies)"))
    else:
        bad = [tuple(float(x) / 2 for x in k) for k in cfg.F.freqs if np.any(k % 2)]
        out.append((False, f"periodicity: F has half-integer frequencies, e.g. m={bad[0]}; "
                           "F must live on T^d"))
    S = gevrey_upper_bound(cfg.F, cfg.r)
    out.append((True, f"S_r(F) = {S:.6g} at r = {cfg.r:g}"))
    for e in run_gates(cfg.A, cfg.F, p):
        if e.startswith("smallness"):
            out.append((False, e))
    return out


def cmd_check(args) -> int:
    try:
        cfg = io.load_config(args.config, args.seed)
        p = _params(cfg)
    except (io.ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    ok_all = True
    for ok, msg in findings(cfg, p):
        print(("PASS " if ok else "FAIL ") + msg)
        ok_all &= ok
    print("check: " + ("ok" if ok_all else "failed"))
    return 0 if ok_all else 1


def _write_artifacts(out: Path, cfg: io.ProblemConfig, p: KamParams, res, timing: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    io.write_csv(out / "report.csv", res.rows, REPORT_COLUMNS)
    io.write_json(out / "report.json", io.jsonable({"columns": REPORT_COLUMNS, "rows": res.rows,
                                                    "records": res.records}))
    fns = {"Z": res.Z, "Abar": res.Abar, "Fbar": res.Fbar, "F_eps": res.state.F,
           "Psi": res.Psi, "Psi_inv": res.Psi_inv}
    for name, f in fns.items():
        io.write_json(out / f"{name}.json", io.fn_to_json(f))
    io.write_json(out / "A_eps.json", io.matrix_to_json(res.A_eps))
    io.write_json(out / "run.json", io.jsonable({
        "config": cfg.to_dict(),
        "params": {k: getattr(p, k) for k in _PARAM_FIELDS + ("r",)},
        "group": cfg.group.value,
        "success": res.success,
        "message": res.message,
        "steps": res.steps,
        "residual_budget": res.residual_budget,
        "step_checks": res.step_checks,
        "constants": p.constants.to_dict(),
        "timing": timing,
    }))


def cmd_run(args) -> int:
    try:
        cfg = io.load_config(args.config, args.seed)
        p = _params(cfg, args)
    except (io.ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    bad = [msg for ok, msg in findings(cfg, p) if not ok]
    if bad:
        for msg in bad:
            print("FAIL " + msg, file=sys.stderr)
        return 1
    if cfg.group.is_real:
        cfg.F = cfg.F.with_(real=True)
    try:
        res = run(cfg.A, cfg.F, p, timing=not args.no_timing)
    except KamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    _write_artifacts(out, cfg, p, res, not args.no_timing)
    for r in res.rows:
        print(f"k={r['k']}  S(F_k)={r['eps_k']:.3e}  N_k={r['N_k']}  S(Z-Id)={r['S_Zminus_id']:.3e}")
    if res.success:
        print(f"run: {res.message} after {res.steps} double step(s); artifacts in {out}")
        return 0
    if p.max_steps == 0:
        print("run: no steps permitted (max-steps 0) and the target is not met", file=sys.stderr)
    else:
        print(f"run: {res.message}", file=sys.stderr)
    return 2


def load_run(run_dir: Path) -> dict:
    meta = io.read_json(run_dir / "run.json")
    cfg = io.parse_config(meta["config"], str(run_dir / "run.json"))
    arts = {name: io.fn_from_json(io.read_json(run_dir / f"{name}.json"), name) for name in ARTIFACTS}
    arts["A_eps"] = io.matrix_from_json(io.read_json(run_dir / "A_eps.json"), "A_eps")
    if cfg.group.is_real:
        cfg.F = cfg.F.with_(real=True)
        arts["A_eps"] = arts["A_eps"].real
    return {"meta": meta, "cfg": cfg, **arts}


def verify_run(data: dict, T: float = 10.0, h: float = 1e-3, grid_size: int = 32,
               null_conjugacy: bool = False, xtol: float = 1e-4) -> dict:
    """All artifact checks; each entry has a value, a threshold and a verdict."""
    from .verify import conjugacy_residual, group_membership, reducibility_cross_check, residual_bound
    cfg, meta = data["cfg"], data["meta"]
    w = cfg.dd.w
    Z = data["Z"]
    if null_conjugacy:
        Z = TorusMatFn.identity(cfg.n, cfg.d)
    Abar, Fbar = data["Abar"], data["Fbar"]
    max_band = float(meta["params"]["max_band"])
    acc = float(meta["residual_budget"])
    out = {}
    res = conjugacy_residual(cfg.A, cfg.F, Z, Abar + Fbar, w, grid_size)
    bound = residual_bound(cfg.A, cfg.F, Z, Abar, Fbar, w, acc, max_band)
    out["conjugacy_residual"] = {"value": res, "threshold": bound, "ok": res <= bound}
    xc = reducibility_cross_check(cfg.A, cfg.F, Z, Abar, Fbar, w, np.zeros(cfg.d), T, h)
    out["reducibility_cross_check"] = {"value": xc, "threshold": xtol, "ok": xc <= xtol}
    ok, v = group_membership(Z, cfg.group, tol=1e-8 * (1 + Z.l1()))
    out["group_membership_Z"] = {"value": v, "threshold": 1e-8 * (1 + Z.l1()), "ok": ok}
    # the stored reducible pair must be exactly what Psi, Psi^{-1}, A_eps, F_eps produce
    Ab2, Fb2 = reducible_pair(data["Psi"], data["Psi_inv"], data["A_eps"], data["F_eps"], w, cfg.group)
    scale = 1 + Abar.l1() + Fbar.l1()
    dev = max((Ab2 - Abar).max_coeff(), (Fb2 - Fbar).max_coeff())
    out["reducible_pair_consistency"] = {"value": dev, "threshold": 1e-13 * scale, "ok": dev <= 1e-13 * scale}
    from .torus_fn import convolve_product
    PP = convolve_product(data["Psi"], data["Psi_inv"]) - TorusMatFn.identity(cfg.n, cfg.d)
    dev = PP.max_coeff()
    out["psi_inverse"] = {"value": dev, "threshold": 1e-12, "ok": dev <= 1e-12}
    out["passed"] = all(v["ok"] for v in out.values() if isinstance(v, dict))
    return out


def cmd_verify(args) -> int:
    run_dir = Path(args.run_dir)
    try:
        data = load_run(run_dir)
    except (io.ConfigError, KeyError, OSError) as exc:
        print(f"error: missing or unreadable artifacts: {exc}", file=sys.stderr)
        return 1
    rep = verify_run(data, args.T, args.h, args.grid, args.null_conjugacy)
    io.write_json(run_dir / "verify.json", io.jsonable(rep))
    for name, v in rep.items():
        if isinstance(v, dict):
            print(f"{'PASS' if v['ok'] else 'FAIL'} {name}: {v['value']:.3e} (threshold {v['threshold']:.3e})")
    print("verify: " + ("ok" if rep["passed"] else "failed"))
    return 0 if rep["passed"] else 1


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    try:
        rows = io.read_csv(run_dir / "report.csv")
        meta = io.read_json(run_dir / "run.json")
    except (OSError, io.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    cols = ("k", "eps_k", "r_k", "N_k", "kappa_k", "dc_margin", "S_Zminus_id", "budget")
    print("  ".join(f"{c:>12}" for c in cols))
    for r in rows:
        print("  ".join(f"{float(r[c]):>12.4e}" if c != "k" else f"{r[c]:>12}" for c in cols))
    print(f"status: {meta['message']} ({meta['steps']} double steps, group {meta['group']})")
    vpath = run_dir / "verify.json"
    if vpath.exists():
        v = io.read_json(vpath)
        print("verify: " + ("ok" if v.get("passed") else "failed"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gevkam", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("config_pos", nargs="?", metavar="CONFIG")
        p.add_argument("--config", dest="config_opt")
        p.add_argument("--seed", type=int, default=None, help="seed for generated perturbations")

    c = sub.add_parser("check", help="validate a problem config")
    add_config(c)
    c.set_defaults(func=cmd_check)

    r = sub.add_parser("run", help="run the KAM iteration and write artifacts")
    add_config(r)
    r.add_argument("--mode", choices=("practical", "faithful"))
    r.add_argument("--target-eps", dest="target_eps", type=float)
    r.add_argument("--max-steps", dest="max_steps", type=int)
    r.add_argument("--out", default="run_out")
    r.add_argument("--no-timing", action="store_true", help="write zero wall times (bit-identical reports)")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="check stored run artifacts")
    v.add_argument("run_dir")
    v.add_argument("--T", type=float, default=10.0)
    v.add_argument("--h", type=float, default=1e-3)
    v.add_argument("--grid", type=int, default=32)
    v.add_argument("--null-conjugacy", action="store_true", help="replace Z by the identity")
    v.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="print the step table of a run")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command in ("check", "run"):
        args.config = args.config_opt or args.config_pos
        if not args.config:
            ap.error("a config path is required (positional or --config)")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
