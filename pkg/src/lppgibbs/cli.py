"""Command-line entry point: one subcommand per experiment, CSV output."""

from __future__ import annotations

import argparse
import csv
import inspect
import io
import json
import sys
from typing import Dict, List, Optional

from . import experiments as ex
from .errors import InvalidInput, LppGibbsError

COLUMNS = ["experiment", "seed", "n", "k", "steps", "param_name", "param_value", "trials",
           "estimate", "stderr", "extra"]


def _check_km(seed, mode="km", **kw):
    if mode == "sup":
        allowed = {"r_list", "trials", "steps"}
        return ex.bridge_sup(seed, **{k: v for k, v in kw.items() if k in allowed})
    if mode != "km":
        raise InvalidInput("mode must be 'km' or 'sup'")
    kw.pop("r_list", None)
    return ex.km_check(seed, **kw)


def _simulate_lpp(seed, brute_force=0, **kw):
    rows = ex.lpp_vs_gue(seed, **kw)
    if brute_force:
        rows += ex.dp_brute_force(seed, instances=int(brute_force))
    return rows


def _km_signature(seed, mode="km", k=2, x=None, y=None, a=0.0, b=1.0, trials=100_000, steps=50,
                  r_list=(0.5, 1.0)):
    pass


def _lpp_signature(seed, n=5, ell=1, steps=20_000, trials=10_000, coarsen=(1, 2), brute_force=0):
    pass


# subcommand -> (driver, signature source, flag renames)
COMMANDS = {
    "simulate-lpp": (_simulate_lpp, _lpp_signature, {"k": "ell"}),
    "simulate-dyson": (ex.gue_tails, ex.gue_tails, {}),
    "estimate-close": (ex.close_exponent, ex.close_exponent, {}),
    "estimate-neargeod": (ex.neargeod_exponent, ex.neargeod_exponent, {}),
    "check-km": (_check_km, _km_signature, {}),
    "check-gibbs": (ex.gibbs_check, ex.gibbs_check, {}),
    "jump-demo": (ex.jump_demo, ex.jump_demo, {"trials": "samples"}),
    "check-regularity": (ex.regularity, ex.regularity, {}),
    "bridge-compare": (ex.bridge_compare, ex.bridge_compare, {}),
}


def read_config(path: str) -> Dict[str, str]:
    """``key=value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise InvalidInput(f"cannot read config {path}: {exc}") from exc
    for no, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInput(f"{path}:{no}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


def _parse_value(raw: str, default):
    try:
        if isinstance(raw, str) and ":" in raw:
            # per-k lists: "1:0.1,0.2;2:0.3,0.4"
            d = {}
            for part in raw.split(";"):
                key, vals = part.split(":")
                d[int(key)] = tuple(float(v) for v in vals.split(","))
            return d
        if isinstance(default, bool):
            return str(raw).lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(float(raw))
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, (tuple, list)) or (isinstance(raw, str) and "," in raw):
            vals = [float(v) for v in str(raw).split(",") if v.strip()]
            if isinstance(default, (tuple, list)) and default and isinstance(default[0], int) \
                    and not isinstance(default[0], bool):
                return tuple(int(v) for v in vals)
            return tuple(vals)
        if default is None:
            return float(raw)
        return raw
    except (TypeError, ValueError) as exc:
        raise InvalidInput(f"cannot parse value {raw!r}") from exc


def build_kwargs(command: str, config: Dict[str, str], flags: Dict[str, Optional[int]]) -> Dict[str, object]:
    _, sig_src, renames = COMMANDS[command]
    params = inspect.signature(sig_src).parameters
    merged = dict(config)
    for key, val in flags.items():
        if val is not None:
            merged[renames.get(key, key)] = val
    kwargs = {}
    for key, raw in merged.items():
        key = renames.get(key, key)
        if key not in params or key == "seed":
            raise InvalidInput(f"{command} does not accept {key!r}")
        kwargs[key] = _parse_value(raw, params[key].default) if isinstance(raw, str) else raw
    return kwargs


def _fmt(v) -> str:
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def write_csv(rows: List[ex.Row], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([r.experiment, r.seed, r.n, r.k, r.steps, r.param_name, _fmt(float(r.param_value)),
                    r.trials, _fmt(float(r.estimate)), _fmt(float(r.stderr)),
                    json.dumps(r.extra, sort_keys=True, default=float)])


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lppgibbs", description="Monte Carlo experiments on Brownian LPP, "
                                "Dyson Brownian motion and avoiding Brownian bridges.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--n", type=int)
        s.add_argument("--k", type=int)
        s.add_argument("--steps", type=int)
        s.add_argument("--trials", type=int)
        s.add_argument("--out")
        s.add_argument("--config")
    return p


def run(argv: Optional[List[str]] = None, stdout=None) -> int:
    stdout = sys.stdout if stdout is None else stdout
    try:
        args = make_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if not 0 <= args.seed < 2**64:
            raise InvalidInput("seed must be an unsigned 64-bit integer")
        config = read_config(args.config) if args.config else {}
        flags = {"n": args.n, "k": args.k, "steps": args.steps, "trials": args.trials}
        kwargs = build_kwargs(args.command, config, flags)
        rows = COMMANDS[args.command][0](args.seed, **kwargs)
        buf = io.StringIO()
        write_csv(rows, buf)
        if args.out:
            with open(args.out, "w", newline="") as fh:
                fh.write(buf.getvalue())
        else:
            stdout.write(buf.getvalue())
    except LppGibbsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except TypeError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())
