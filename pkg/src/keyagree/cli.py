"""Command-line front end: ``keyagree <group> <command> [options]``.

Every command writes a JSON document (with the config hash and master
seed) to ``--out`` and prints a short table.  Without ``--out`` the file
goes to ``$KEYAGREE_OUTPUT_DIR`` (default: the working directory) under a
name derived from the command and config hash.

Exit codes: 0 success, 1 invalid input or usage, 2 internal failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .binning_sim import SimulationError, TypicalityParams, run_fb, run_nofb
from .channel import (AuxScheme, BroadcastChannelSpec, ChannelError, FeedbackScheme,
                      build_joint_fb, build_joint_nofb, reduce_to_wiretap)
from .prob import PMFError
from .region_fb import eval_inner_fb, verify_fm_matches_closed_form
from .region_nofb import (SearchBudget, eval_inner_nofb, eval_outer_nofb, maximize_inner_nofb,
                          maximize_outer_nofb, scheme_to_dict)

log = logging.getLogger("keyagree")

SCHEMA_VERSION = 1
OUTPUT_DIR_ENV = "KEYAGREE_OUTPUT_DIR"
ROW_TOL = 1e-9
CHANNEL_AXES = ("S", "X", "Y1", "Y2", "Z")
BUNDLED = ("noiseless-binary", "bsc-wiretap", "state-binary")


class InputError(ValueError):
    """Bad user input: maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------- channel io

def _load_json(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    if not isinstance(data, dict):
        raise InputError(f"{path}: top level must be an object")
    return data


def _check_version(data: dict, where: str) -> None:
    v = data.get("schema_version")
    if v != SCHEMA_VERSION:
        raise InputError(f"{where}: unsupported schema_version {v!r} (expected {SCHEMA_VERSION})")


def _array(value, shape: tuple[int, ...], name: str) -> np.ndarray:
    """Nested list to array, reporting the first ragged or misshapen index."""

    def walk(v, depth, idx):
        if depth == len(shape):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise InputError(f"{name}{idx}: expected a number, got {v!r}")
            return
        if not isinstance(v, list) or len(v) != shape[depth]:
            got = len(v) if isinstance(v, list) else type(v).__name__
            raise InputError(f"{name}{idx}: expected {shape[depth]} entries, got {got}")
        for i, item in enumerate(v):
            walk(item, depth + 1, f"{idx}[{i}]")

    walk(value, 0, "")
    a = np.asarray(value, dtype=float)
    bad = np.argwhere(~np.isfinite(a) | (a < 0))
    if len(bad):
        raise InputError(f"{name}{''.join(f'[{i}]' for i in bad[0])}: entries must be finite "
                         "and non-negative")
    return a


def channel_from_dict(data: dict, where: str = "channel") -> BroadcastChannelSpec:
    _check_version(data, where)
    al = data.get("alphabets")
    if not isinstance(al, dict) or set(al) != set(CHANNEL_AXES):
        raise InputError(f"{where}: 'alphabets' must give sizes for {', '.join(CHANNEL_AXES)}")
    cards = {}
    for k in CHANNEL_AXES:
        v = al[k]
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise InputError(f"{where}: alphabet size of {k} must be a positive integer")
        cards[k] = v
    ps = _array(data.get("state_pmf"), (cards["S"],), f"{where}: state_pmf")
    if abs(ps.sum() - 1) > ROW_TOL:
        raise InputError(f"{where}: state_pmf sums to {ps.sum():.12g}, not 1")
    W = _array(data.get("transition"), tuple(cards[k] for k in ("X", "S", "Y1", "Y2", "Z")),
               f"{where}: transition")
    sums = W.sum(axis=(2, 3, 4))
    for x, s in np.argwhere(np.abs(sums - 1) > ROW_TOL):
        raise InputError(f"{where}: transition row (x={x}, s={s}) sums to "
                         f"{sums[x, s]:.12g}, not 1")
    try:
        return BroadcastChannelSpec.from_arrays(ps, W)
    except (ChannelError, PMFError) as exc:
        raise InputError(f"{where}: {exc}") from None


def _fmt_num(x: float) -> str:
    return repr(float(x))


def _fmt_nested(a: np.ndarray, indent: int) -> str:
    """Arrays with the last axis on one line."""
    pad = " " * indent
    if a.ndim == 1:
        return "[" + ", ".join(_fmt_num(v) for v in a) + "]"
    inner = [pad + "  " + _fmt_nested(sub, indent + 2) for sub in a]
    return "[\n" + ",\n".join(inner) + "\n" + pad + "]"


def channel_to_json(channel: BroadcastChannelSpec, name: str | None = None) -> str:
    """Canonical text form; parsing it back and re-serializing is the identity."""
    c = channel.cards
    lines = ["{", f'  "schema_version": {SCHEMA_VERSION},']
    if name is not None:
        lines.append(f'  "name": {json.dumps(name)},')
    lines.append('  "alphabets": {' + ", ".join(f'"{k}": {c[k]}' for k in CHANNEL_AXES) + "},")
    lines.append('  "state_pmf": ' + _fmt_nested(np.asarray(channel.p_s), 2) + ",")
    lines.append('  "transition": ' + _fmt_nested(np.asarray(channel.W), 2))
    lines.append("}")
    return "\n".join(lines) + "\n"


def bundled_channel_path(name: str) -> Path:
    return Path(str(resources.files("keyagree") / "data" / f"{name}.json"))


def parse_channel(path: str | Path) -> BroadcastChannelSpec:
    """Load and validate a channel file (or a bundled channel by name)."""
    if isinstance(path, str) and path in BUNDLED:
        path = bundled_channel_path(path)
    return channel_from_dict(_load_json(path), str(path))


# ---------------------------------------------------------------- schemes

def scheme_from_dict(data: dict, channel: BroadcastChannelSpec, kind: str, where: str):
    _check_version(data, where)
    if data.get("kind") != kind:
        raise InputError(f"{where}: expected a scheme of kind {kind!r}, got {data.get('kind')!r}")
    c = channel.cards
    try:
        if kind == "nofb":
            n0, n1, n2 = (data.get("cards", {}).get(k) for k in ("U0", "U1", "U2"))
            if not all(isinstance(v, int) and v >= 1 for v in (n0, n1, n2)):
                raise InputError(f"{where}: 'cards' must give positive sizes for U0, U1, U2")
            ns, nx = c["S"], c["X"]
            arrs = [_array(data.get("u0_given_s"), (ns, n0), f"{where}: u0_given_s"),
                    _array(data.get("u1_given_s_u0"), (ns, n0, n1), f"{where}: u1_given_s_u0"),
                    _array(data.get("u2_given_s_u0"), (ns, n0, n2), f"{where}: u2_given_s_u0"),
                    _array(data.get("x_given_s_u0_u1_u2"), (ns, n0, n1, n2, nx),
                           f"{where}: x_given_s_u0_u1_u2")]
            return AuxScheme.from_arrays(*arrs)
        nv1 = data.get("cards", {}).get("V1")
        nv2 = data.get("cards", {}).get("V2")
        if not all(isinstance(v, int) and v >= 1 for v in (nv1, nv2)):
            raise InputError(f"{where}: 'cards' must give positive sizes for V1, V2")
        arrs = [_array(data.get("x_given_s"), (c["S"], c["X"]), f"{where}: x_given_s"),
                _array(data.get("v1_given_y1"), (c["Y1"], nv1), f"{where}: v1_given_y1"),
                _array(data.get("v2_given_y2"), (c["Y2"], nv2), f"{where}: v2_given_y2")]
        return FeedbackScheme.from_arrays(*arrs)
    except (ChannelError, PMFError) as exc:
        raise InputError(f"{where}: {exc}") from None


def nofb_scheme_dict(scheme: AuxScheme) -> dict:
    k = scheme.cards
    d = {"schema_version": SCHEMA_VERSION, "kind": "nofb",
         "cards": {"U0": k["U0"], "U1": k["U1"], "U2": k["U2"]}}
    d.update(scheme_to_dict(scheme))
    return d


def fb_scheme_dict(scheme: FeedbackScheme) -> dict:
    px, pv1, pv2 = scheme.arrays
    return {"schema_version": SCHEMA_VERSION, "kind": "fb",
            "cards": {"V1": pv1.shape[1], "V2": pv2.shape[1]},
            "x_given_s": px.tolist(), "v1_given_y1": pv1.tolist(), "v2_given_y2": pv2.tolist()}


def default_nofb_scheme(channel: BroadcastChannelSpec) -> AuxScheme:
    """``U0`` uniform over the input alphabet, ``X = U0``, ``U1`` and ``U2`` constant."""
    ns, nx = channel.cards["S"], channel.cards["X"]
    px = np.zeros((ns, nx, 1, 1, nx))
    px[:, np.arange(nx), 0, 0, np.arange(nx)] = 1.0
    return AuxScheme.from_arrays(np.full((ns, nx), 1.0 / nx), np.ones((ns, nx, 1)),
                                 np.ones((ns, nx, 1)), px)


def default_fb_scheme(channel: BroadcastChannelSpec) -> FeedbackScheme:
    """Uniform ``X``, ``V1 = Y1`` and ``V2 = Y2``."""
    c = channel.cards
    return FeedbackScheme.from_arrays(np.full((c["S"], c["X"]), 1.0 / c["X"]),
                                      np.eye(c["Y1"]), np.eye(c["Y2"]))


# ---------------------------------------------------------------- output

def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


def _table(result: dict, prefix: str = "") -> list[tuple[str, str]]:
    rows = []
    for k, v in result.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            rows.extend(_table(v, key + "."))
        elif isinstance(v, (int, float, str, bool)) or v is None:
            rows.append((key, f"{v:.6g}" if isinstance(v, float) else str(v)))
    return rows


def emit(command: str, config: dict, seed: int | None, result: dict, out: str | None) -> Path:
    h = config_hash(config)
    doc = {"schema_version": SCHEMA_VERSION, "command": command, "version": __version__,
           "config": config, "config_hash": h, "seed": seed, "result": _jsonable(result)}
    if out is None:
        base = Path(os.environ.get(OUTPUT_DIR_ENV) or ".")
        out_path = base / f"{command.replace(' ', '-')}-{h[:12]}.json"
    else:
        out_path = Path(out)
    try:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n")
    except OSError as exc:
        raise InputError(f"cannot write {out_path}: {exc.strerror}") from None
    rows = _table(doc["result"])
    width = max((len(k) for k, _ in rows), default=0)
    print(f"{command}  (config {h[:12]}, seed {seed})")
    for k, v in rows:
        print(f"  {k:<{width}}  {v}")
    print(f"  -> {out_path}")
    return out_path


# --------------------------------------------------------------- commands

def _channel_arg(args) -> tuple[BroadcastChannelSpec, dict]:
    ch = parse_channel(args.channel)
    return ch, json.loads(channel_to_json(ch))


def _scheme_arg(args, channel, kind):
    if not getattr(args, "scheme", None):
        return None, None
    data = _load_json(args.scheme)
    sch = scheme_from_dict(data, channel, kind, args.scheme)
    return sch, (nofb_scheme_dict(sch) if kind == "nofb" else fb_scheme_dict(sch))


def _budget(args) -> SearchBudget:
    try:
        return SearchBudget(restarts=args.restarts, iterations=args.iterations, seed=args.seed,
                            workers=args.workers)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def cmd_inner_nofb(args) -> int:
    ch, chd = _channel_arg(args)
    sch, schd = _scheme_arg(args, ch, "nofb")
    config = {"channel": chd, "scheme": schd}
    if sch is not None:
        result = eval_inner_nofb(build_joint_nofb(ch, sch)).to_dict()
        emit("region inner-nofb", config, None, result, args.out)
        return 0
    budget = _budget(args)
    config.update(restarts=budget.restarts, iterations=budget.iterations,
                  weights=list(args.weights), cards=args.cards)
    rep = maximize_inner_nofb(ch, cards=args.cards, weights=args.weights, budget=budget)
    emit("region inner-nofb", config, args.seed, rep.to_dict(), args.out)
    return 0


def cmd_outer_nofb(args) -> int:
    ch, chd = _channel_arg(args)
    sch, schd = _scheme_arg(args, ch, "nofb")
    config = {"channel": chd, "scheme": schd}
    if sch is not None:
        box = eval_outer_nofb(build_joint_nofb(ch, sch))
        emit("region outer-nofb", config, None, box.to_dict(), args.out)
        return 0
    budget = _budget(args)
    config.update(restarts=budget.restarts, grid_step=args.grid_step)
    box = maximize_outer_nofb(ch, budget, grid_step=args.grid_step)
    emit("region outer-nofb", config, args.seed, box.to_dict(), args.out)
    return 0


def _fb_inputs(args):
    ch, chd = _channel_arg(args)
    sch, schd = _scheme_arg(args, ch, "fb")
    if sch is None:
        sch = default_fb_scheme(ch)
        schd = fb_scheme_dict(sch)
    return ch, chd, sch, schd


def cmd_inner_fb(args) -> int:
    ch, chd, sch, schd = _fb_inputs(args)
    result = eval_inner_fb(build_joint_fb(ch, sch)).to_dict()
    emit("region inner-fb", {"channel": chd, "scheme": schd}, None, result, args.out)
    return 0


def cmd_fm_verify(args) -> int:
    ch, chd, sch, schd = _fb_inputs(args)
    if args.grid_step <= 0:
        raise InputError("--grid-step must be positive")
    rep = verify_fm_matches_closed_form(build_joint_fb(ch, sch), grid_step=args.grid_step,
                                        literal=args.literal)
    config = {"channel": chd, "scheme": schd, "grid_step": args.grid_step,
              "literal": args.literal}
    emit("region fm-verify", config, None, rep.to_dict(), args.out)
    return 0


def cmd_sim_nofb(args) -> int:
    ch, chd = _channel_arg(args)
    sch, schd = _scheme_arg(args, ch, "nofb")
    if sch is None:
        sch = default_nofb_scheme(ch)
        schd = nofb_scheme_dict(sch)
    tp = TypicalityParams(args.n, args.eps)
    rep = run_nofb(ch, sch, args.rates, tp, args.trials, args.seed, selection=args.selection,
                   workers=args.workers, log_trials=args.log_trials)
    config = {"channel": chd, "scheme": schd, "rates": list(args.rates), "n": args.n,
              "eps": args.eps, "trials": args.trials, "selection": args.selection,
              "log_trials": args.log_trials}
    emit("simulate nofb", config, args.seed, rep.to_dict(), args.out)
    if args.csv:
        Path(args.csv).write_text(rep.to_csv())
    return 0


def cmd_sim_fb(args) -> int:
    ch, chd, sch, schd = _fb_inputs(args)
    tp = TypicalityParams(args.n, args.eps)
    rep = run_fb(ch, sch, args.rates, tp, args.trials, args.seed, workers=args.workers,
                 log_trials=args.log_trials)
    config = {"channel": chd, "scheme": schd, "rates": list(args.rates), "n": args.n,
              "eps": args.eps, "trials": args.trials, "log_trials": args.log_trials}
    emit("simulate fb", config, args.seed, rep.to_dict(), args.out)
    if args.csv:
        Path(args.csv).write_text(rep.to_csv())
    return 0


def cmd_reduce(args) -> int:
    ch, chd = _channel_arg(args)
    try:
        red = reduce_to_wiretap(ch, args.mode)
    except ChannelError as exc:
        raise InputError(str(exc)) from None
    result = {"mode": args.mode, "channel": json.loads(channel_to_json(red))}
    emit("reduce wiretap", {"channel": chd, "mode": args.mode}, None, result, args.out)
    return 0


# ---------------------------------------------------------------- parser

def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _nonneg_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="keyagree", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"keyagree {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    groups = p.add_subparsers(dest="group", parser_class=_Parser)

    def common(sp, scheme=True, seed=True):
        sp.add_argument("--channel", default="noiseless-binary",
                        help="channel JSON file or bundled name (%(default)s)")
        if scheme:
            sp.add_argument("--scheme", help="scheme JSON file")
        sp.add_argument("--out", help="output JSON path")
        if seed:
            sp.add_argument("--seed", type=_nonneg_int, default=0, help="master seed")
            sp.add_argument("--workers", type=_positive_int, default=1)

    def search(sp):
        sp.add_argument("--restarts", type=_positive_int, default=64)
        sp.add_argument("--iterations", type=_nonneg_int, default=500)

    region = groups.add_parser("region", help="rate-region evaluation").add_subparsers(
        dest="command", parser_class=_Parser)
    sp = region.add_parser("inner-nofb", help="inner bound without feedback")
    common(sp)
    search(sp)
    sp.add_argument("--weights", type=float, nargs=3, default=(1.0, 1.0, 1.0),
                    metavar=("W0", "W1", "W2"))
    sp.add_argument("--cards", type=_positive_int, nargs=3, metavar=("N0", "N1", "N2"))
    sp.set_defaults(func=cmd_inner_nofb)
    sp = region.add_parser("outer-nofb", help="outer bound without feedback")
    common(sp)
    search(sp)
    sp.add_argument("--grid-step", type=float, default=0.05)
    sp.set_defaults(func=cmd_outer_nofb)
    sp = region.add_parser("inner-fb", help="closed-form bound with feedback")
    common(sp, seed=False)
    sp.set_defaults(func=cmd_inner_fb)
    sp = region.add_parser("fm-verify", help="compare projected and closed-form regions")
    common(sp, seed=False)
    sp.add_argument("--grid-step", type=float, default=0.01)
    sp.add_argument("--literal", action="store_true",
                    help="use the second decoding row as printed")
    sp.set_defaults(func=cmd_fm_verify)

    sim = groups.add_parser("simulate", help="protocol simulation").add_subparsers(
        dest="command", parser_class=_Parser)
    for name, func, rates, defaults in (
            ("nofb", cmd_sim_nofb, ("RT0", "RT1", "RT2", "R0", "R1", "R2"),
             (1.0, 0.0, 0.0, 0.5, 0.0, 0.0)),
            ("fb", cmd_sim_fb, ("RP1", "RP2", "R1", "R2"), (0.3, 0.3, 0.2, 0.2))):
        sp = sim.add_parser(name, help=f"simulate the {name} protocol")
        common(sp)
        sp.add_argument("--rates", type=float, nargs=len(rates), metavar=rates, default=defaults)
        sp.add_argument("--n", type=_positive_int, default=8, help="blocklength")
        sp.add_argument("--eps", type=float, default=0.2, help="typicality slack")
        sp.add_argument("--trials", type=_positive_int, default=1000)
        sp.add_argument("--csv", help="also write metrics as CSV")
        sp.add_argument("--log-trials", action="store_true", help="include per-trial keys")
        if name == "nofb":
            sp.add_argument("--selection", choices=("random", "first"), default="random")
        sp.set_defaults(func=func)

    red = groups.add_parser("reduce", help="channel reductions").add_subparsers(
        dest="command", parser_class=_Parser)
    sp = red.add_parser("wiretap", help="specialize to a wiretap channel")
    common(sp, scheme=False, seed=False)
    sp.add_argument("--mode", choices=("nofb", "fb_keep_rx1", "fb_keep_rx2"), default="nofb")
    sp.set_defaults(func=cmd_reduce)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, ChannelError, PMFError, SimulationError) as exc:
        print(f"keyagree: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to exit code 2
        log.debug("internal failure", exc_info=True)
        print(f"keyagree: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
