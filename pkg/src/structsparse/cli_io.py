"""Command-line entry point, signal/result file formats and the benchmark harness.

Subcommands::

    structsparse project {tree-tail,tree-head,cemd-head,cemd-tail} --input FILE ...
    structsparse recover --model {tree,cemd} ...
    structsparse bench --suite {conv,tree,cemd} --sizes 1024,2^12 --seeds 3

Exit codes: 0 success, 2 invalid input or parameters, 1 internal error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import statistics
import sys
import time
import warnings
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from ._exact import exact_sum, normalize, to_decimal

EXIT_OK, EXIT_INTERNAL, EXIT_INVALID = 0, 1, 2
THREADS_ENV = "STRUCT_SPARSE_THREADS"


class InputError(ValueError):
    """Invalid user input; reported with exit code 2."""


# --------------------------------------------------------------------------
# signal files


@dataclass
class SignalFile:
    """A tree (level-order weights) or a grid (row-major weights)."""

    kind: str
    weights: np.ndarray
    p: float = 1.0
    b: int | None = None
    h: int | None = None
    w: int | None = None

    def __post_init__(self):
        if self.kind not in ("tree", "grid"):
            raise InputError(f"field 'kind': expected 'tree' or 'grid', got {self.kind!r}")
        self.weights = _weights_array(self.weights, "weights")
        if self.kind == "tree":
            self.b = 2 if self.b is None else self.b
            if int(self.b) != self.b or self.b < 2:
                raise InputError(f"field 'b': arity must be an integer >= 2, got {self.b!r}")
            self.b = int(self.b)
        else:
            if self.h is None or self.w is None:
                raise InputError("grid signals need fields 'h' and 'w'")
            if int(self.h) != self.h or int(self.w) != self.w or self.h < 1 or self.w < 1:
                raise InputError("fields 'h' and 'w' must be positive integers")
            self.h, self.w = int(self.h), int(self.w)
            if self.h * self.w != self.weights.size:
                raise InputError(f"field 'weights': expected h*w = {self.h * self.w} values, "
                                 f"got {self.weights.size}")
        if not (isinstance(self.p, (int, float)) and math.isfinite(self.p) and self.p >= 1):
            raise InputError(f"field 'p': must be a finite number >= 1, got {self.p!r}")

    @property
    def grid(self) -> np.ndarray:
        return self.weights.reshape(self.h, self.w)

    def to_json(self) -> str:
        d = {"kind": self.kind, "p": self.p}
        if self.kind == "tree":
            d["b"] = self.b
        else:
            d["h"], d["w"] = self.h, self.w
        d["weights"] = self.weights.tolist()
        return json.dumps(d)

    def to_csv(self) -> str:
        rows = self.weights.reshape(-1, 1) if self.kind == "tree" else self.grid
        return "\n".join(",".join(repr(v) for v in r) for r in rows.tolist()) + "\n"


def _weights_array(values, where: str) -> np.ndarray:
    if isinstance(values, np.ndarray):
        vals = values.ravel().tolist()
    else:
        vals = list(values)
    if not vals:
        raise InputError(f"field '{where}': no values")
    for i, v in enumerate(vals):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise InputError(f"field '{where}[{i}]': not a number: {v!r}")
        if isinstance(v, float) and not math.isfinite(v):
            raise InputError(f"field '{where}[{i}]': not finite")
    if all(isinstance(v, int) for v in vals):
        if max(abs(v) for v in vals) >= 2**62:
            raise InputError(f"field '{where}': integer weights must stay below 2**62")
        return np.asarray(vals, dtype=np.int64)
    return np.asarray(vals, dtype=np.float64)


def parse_json_signal(text: str) -> SignalFile:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"line {exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(d, dict):
        raise InputError("top level must be a JSON object")
    for key in ("kind", "weights"):
        if key not in d:
            raise InputError(f"missing field '{key}'")
    if not isinstance(d["weights"], list):
        raise InputError("field 'weights': must be a flat array")
    return SignalFile(d["kind"], d["weights"], d.get("p", 1.0), d.get("b"), d.get("h"), d.get("w"))


def _csv_number(tok: str, line: int, col: int):
    tok = tok.strip()
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        v = float(tok)
    except ValueError:
        raise InputError(f"line {line}, column {col}: not a number: {tok!r}") from None
    if not math.isfinite(v):
        raise InputError(f"line {line}, column {col}: not finite")
    return v


def parse_csv_signal(text: str, kind: str, p: float = 1.0, b: int = 2) -> SignalFile:
    """One row per grid row; a single column of level-order weights for trees."""
    rows = []
    for ln, rec in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not rec or all(not c.strip() for c in rec):
            continue
        rows.append([_csv_number(c, ln, j + 1) for j, c in enumerate(rec)])
    if not rows:
        raise InputError("line 1: empty CSV")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise InputError(f"rows have different lengths: {sorted(widths)}")
    flat = [v for r in rows for v in r]
    if kind == "tree":
        if widths != {1}:
            raise InputError("tree CSV must have a single column")
        return SignalFile("tree", flat, p, b=b)
    return SignalFile("grid", flat, p, h=len(rows), w=len(rows[0]))


def read_signal(path, kind: str | None = None, p: float | None = None, b: int | None = None) -> SignalFile:
    """Load a JSON or CSV signal; CSV is chosen by the ``.csv`` suffix."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    if path.suffix.lower() == ".csv":
        if kind is None:
            raise InputError("CSV input needs the signal kind")
        return parse_csv_signal(text, kind, 1.0 if p is None else p, 2 if b is None else b)
    sig = parse_json_signal(text)
    if kind is not None and sig.kind != kind:
        raise InputError(f"field 'kind': expected {kind!r}, got {sig.kind!r}")
    if p is not None:
        sig.p = p
    if b is not None and sig.kind == "tree":
        sig.b = b
    return sig


def write_signal(sig: SignalFile, path) -> None:
    path = Path(path)
    path.write_text(sig.to_csv() if path.suffix.lower() == ".csv" else sig.to_json())


# --------------------------------------------------------------------------
# result files


def jsonable(v):
    """Convert numpy scalars/arrays and exact rationals into JSON values."""
    if isinstance(v, dict):
        return {str(k): jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return jsonable(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, Fraction):
        return to_decimal(v)
    if v is None or isinstance(v, (int, float, str)):
        return v
    return str(v)


def make_result(support, value, objective: str, params: dict, elapsed_ms: float, algorithm: str,
                metadata: dict | None = None, **extra) -> dict:
    out = {
        "support": [int(i) for i in support],
        "value": to_decimal(normalize(value)),
        "objective": objective,
        "params": jsonable(params),
        "elapsed_ms": round(float(elapsed_ms), 3),
        "algorithm": algorithm,
        "metadata": jsonable(metadata or {}),
    }
    out.update(jsonable(extra))
    return out


def recompute_value(sig: SignalFile, support, objective: str):
    """Head or tail value of ``support`` (flat indices) on ``|weights|**p``."""
    a = np.abs(sig.weights)
    if sig.p != 1:
        if np.issubdtype(a.dtype, np.integer) and float(sig.p).is_integer():
            a = a ** int(sig.p)
        else:
            a = a.astype(np.float64) ** sig.p
    head = exact_sum(a[np.asarray(support, dtype=np.int64)])
    if objective == "head":
        return normalize(head)
    return normalize(Fraction(exact_sum(a)) - Fraction(head))


def _emit(result: dict, output) -> None:
    text = json.dumps(result, indent=2)
    if output:
        Path(output).write_text(text + "\n")
    else:
        print(text)


# --------------------------------------------------------------------------
# commands


def _apply_threads() -> None:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        raise InputError(f"{THREADS_ENV} must be a positive integer") from None
    if n < 1:
        raise InputError(f"{THREADS_ENV} must be a positive integer")
    import numba

    with warnings.catch_warnings():
        # loading the threading layer may warn about an old TBB; irrelevant here
        warnings.simplefilter("ignore")
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _check_common(args) -> None:
    if args.k is None or args.k < 1:
        raise InputError("--k must be a positive integer")
    if not args.eps > 0:
        raise InputError("--eps must be positive")
    if not 0 < args.delta <= 1:
        raise InputError("--delta must lie in (0, 1]")


def cli_project(args) -> int:
    from . import cemd_model as cm
    from . import tree_model as tm

    _check_common(args)
    tree = args.problem.startswith("tree")
    sig = read_signal(args.input, "tree" if tree else "grid", args.p, args.b if tree else None)
    objective = args.problem.split("-")[1]
    params = {"problem": args.problem, "k": args.k, "eps": args.eps, "delta": args.delta,
              "p": sig.p, "seed": args.seed}
    t0 = time.perf_counter()
    if tree:
        params["b"] = sig.b
        try:
            T = tm.TreeSignal(sig.weights, sig.b, sig.p)
            budget = tm.ProjectionBudget(args.k, args.eps, args.delta)
        except ValueError as exc:
            raise InputError(str(exc)) from None
        algo = args.algorithm
        if algo == "exact":
            sol = tm.exact_tree_projection(T, args.k, objective)
        elif objective == "head":
            if algo == "fast":
                raise InputError("tree-head supports --algorithm exact or linear")
            sol = tm.linear_head_tree(T, budget)
        elif algo == "fast":
            sol = tm.fast_tail_tree(T, budget)
        else:
            sol = tm.linear_tail_tree(T, budget)
        support = sol.support[sol.support < sig.weights.size]
        value = sol.head_value if objective == "head" else sol.tail_value
        meta = dict(sol.metadata)
        algorithm = meta.pop("algorithm", algo)
    else:
        if args.B is None or args.B < 0:
            raise InputError("--B must be a non-negative integer")
        if args.algorithm not in (None, "fast"):
            raise InputError("cemd problems only support the default flow-based algorithm")
        params.update(B=args.B, h=sig.h, w=sig.w)
        X = cm.GridSignal(sig.grid, sig.p)
        try:
            cp = cm.CemdParams(args.k, args.B, args.delta)
            cp.s(X)
        except ValueError as exc:
            raise InputError(str(exc)) from None
        if objective == "head":
            res = cm.cemd_head_projection(X, cp)
            algorithm = "cemd_head_projection"
        else:
            res = cm.cemd_tail_projection(X, cp)
            algorithm = "cemd_tail_projection"
        support = res.flat_support(sig.h)
        meta = dict(res.metadata, emd=res.emd)
        value = recompute_value(sig, support, objective)
    elapsed = (time.perf_counter() - t0) * 1e3
    _emit(make_result(support, value, objective, params, elapsed, algorithm, meta), args.output)
    return EXIT_OK


def cli_recover(args) -> int:
    from . import recovery as rc

    if args.k is None or args.k < 1:
        raise InputError("--k must be a positive integer")
    if args.iters < 1:
        raise InputError("--iters must be at least 1")
    if args.noise < 0:
        raise InputError("--noise must be non-negative")
    try:
        if args.model == "tree":
            if args.n is None:
                raise InputError("--n is required for the tree model")
            cfg = rc.RecoveryConfig("tree", args.k, n=args.n, b=args.b, max_iters=args.iters,
                                    epsilon=args.eps, delta=args.delta)
        else:
            if args.h is None or args.w is None:
                raise InputError("--h and --w are required for the cemd model")
            cfg = rc.RecoveryConfig("cemd", args.k, h=args.h, w=args.w, B=args.B or 0,
                                    max_iters=args.iters, epsilon=args.eps, delta=args.delta)
    except InputError:
        raise
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if args.k > cfg.size:
        raise InputError("--k exceeds the signal size")
    m = None
    if args.m_factor is not None:
        if not args.m_factor > 0:
            raise InputError("--m-factor must be positive")
        scale = 1.0 if args.model == "tree" else max(1.0, math.log(max(cfg.B, 1) / cfg.k))
        m = int(math.ceil(args.m_factor * cfg.k * scale))
    t0 = time.perf_counter()
    x, system = rc.generate_instance(cfg, args.noise, args.seed, m)
    res = rc.am_iht(system, cfg)
    elapsed = (time.perf_counter() - t0) * 1e3
    nx = float(np.linalg.norm(x))
    rel = float(np.linalg.norm(x - res.x)) / nx if nx else float(np.linalg.norm(res.x))
    if args.model == "tree":
        valid = rc.validate_tree(res.x, cfg.k, cfg.b)
    else:
        valid = rc.validate_cemd(res.support, cfg.h, cfg.w, cfg.k // cfg.w, 2 * cfg.B, res.x)
    params = {"model": args.model, "n": cfg.size, "k": cfg.k, "m": system.A.shape[0], "noise": args.noise,
              "iters": args.iters, "seed": args.seed}
    if args.model == "cemd":
        params.update(h=cfg.h, w=cfg.w, B=cfg.B)
    else:
        params.update(b=cfg.b)
    meta = {"iterations": res.iterations, "accepted_steps": res.metadata["accepted_steps"],
            "residuals": res.residuals}
    out = make_result(np.flatnonzero(res.support), Fraction(rel), "recovery", params, elapsed, "am_iht",
                      meta, relative_error=rel, in_model=bool(valid))
    _emit(out, args.output)
    return EXIT_OK


def parse_sizes(text: str) -> list[int]:
    """Comma-separated sizes; ``2^k`` tokens and ``2^a..2^b`` ranges are accepted."""
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if ".." in tok:
            lo, hi = (_size_token(t) for t in tok.split(".."))
            v = lo
            while v <= hi:
                out.append(v)
                v *= 2
        else:
            out.append(_size_token(tok))
    if not out or min(out) < 1:
        raise InputError("--sizes must list positive integers")
    return out


def _size_token(tok: str) -> int:
    try:
        if "^" in tok:
            base, exp = tok.split("^")
            return int(base) ** int(exp)
        return int(tok)
    except ValueError:
        raise InputError(f"--sizes: cannot parse {tok!r}") from None


def _bench_conv(size: int, rng, eps: float):
    from . import rs_conv as rs

    def rand_rs(m):
        vals = np.cumsum(rng.integers(0, 2 * 10**6 // m + 2, size=m))
        pairs, _ = rs.thin_tail(list(enumerate(vals.tolist())), eps)
        return rs.RepSeq.from_pairs(pairs, eps)

    A, B = rand_rs(size), rand_rs(size)
    t0 = time.perf_counter()
    exact = rs.exact_minplus(rs.completion(A), rs.completion(B))
    t_exact = time.perf_counter() - t0
    t0 = time.perf_counter()
    approx = rs.completion(rs.fast_rs_minplus(eps, eps, A, B))
    t_fast = time.perf_counter() - t0
    m = min(len(exact), len(approx))
    ex = np.asarray(exact[:m], dtype=np.float64)
    ap = np.asarray(approx[:m], dtype=np.float64)
    pos = ex > 0
    ratio = float(np.max(ap[pos] / ex[pos])) if pos.any() else 1.0
    return {"time_s": t_fast, "exact_time_s": t_exact, "ratio": ratio}


def _bench_tree(size: int, rng, eps: float):
    from . import tree_model as tm

    n = 1
    while n < size - 1:
        n = 2 * n + 1
    w = rng.integers(0, 101, size=n)
    T = tm.TreeSignal(w)
    k = max(1, n // 10)
    t0 = time.perf_counter()
    sol = tm.fast_tail_tree(T, tm.ProjectionBudget(k, eps))
    t = time.perf_counter() - t0
    ratio = None
    if n <= 4095:
        opt = tm.exact_tree_projection(T, k).tail_value
        ratio = 1.0 if opt == 0 else float(Fraction(sol.tail_value) / Fraction(opt))
    return {"n": n, "k": k, "time_s": t, "ratio": ratio}


def _bench_cemd(size: int, rng, eps: float):
    from . import cemd_model as cm

    h = w = size
    X = rng.integers(0, 10, size=(h, w))
    s = max(1, h // 4)
    params = cm.CemdParams(s * w, max(1, w // 2))
    t0 = time.perf_counter()
    res = cm.cemd_head_projection(cm.GridSignal(X), params)
    t = time.perf_counter() - t0
    ratio = None
    if h <= 8:
        opt = cm.exact_cemd(cm.GridSignal(X), params).phi
        ratio = 1.0 if opt == 0 else float(Fraction(res.phi) / Fraction(opt))
    return {"n": h * w, "time_s": t, "ratio": ratio}


_SUITES = {"conv": _bench_conv, "tree": _bench_tree, "cemd": _bench_cemd}


def cli_bench(args) -> int:
    if args.seeds < 1:
        raise InputError("--seeds must be at least 1")
    sizes = parse_sizes(args.sizes)
    run = _SUITES[args.suite]
    run(min(sizes), np.random.default_rng(args.seed), args.eps)  # compile / warm caches
    rows = []
    for size in sizes:
        recs = [run(size, np.random.default_rng([args.seed, size, s]), args.eps) for s in range(args.seeds)]
        ratios = [r["ratio"] for r in recs if r.get("ratio") is not None]
        row = {"size": size, "median_time_s": statistics.median(r["time_s"] for r in recs),
               "ratio": max(ratios) if ratios else None}
        if "exact_time_s" in recs[0]:
            row["median_exact_time_s"] = statistics.median(r["exact_time_s"] for r in recs)
        rows.append(row)
    header = f"{'size':>10} {'median time (s)':>16} {'ratio':>10}"
    if args.suite == "conv":
        header += f" {'exact time (s)':>15}"
    print(header)
    for r in rows:
        line = f"{r['size']:>10} {r['median_time_s']:>16.4f} "
        line += f"{r['ratio']:>10.4f}" if r["ratio"] is not None else f"{'-':>10}"
        if "median_exact_time_s" in r:
            line += f" {r['median_exact_time_s']:>15.4f}"
        print(line)
    report = {"suite": args.suite, "seeds": args.seeds, "eps": args.eps, "rows": rows}
    if args.output:
        Path(args.output).write_text(json.dumps(report, indent=2) + "\n")
    else:
        print(json.dumps(report))
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="structsparse", description="Tree and constrained-EMD sparsity projections.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    pr = sub.add_parser("project", help="project a signal file onto a sparsity model")
    pr.add_argument("problem", choices=["tree-tail", "tree-head", "cemd-head", "cemd-tail"])
    pr.add_argument("--input", required=True)
    pr.add_argument("--k", type=int, required=True)
    pr.add_argument("--eps", type=float, default=0.1)
    pr.add_argument("--delta", type=float, default=0.05)
    pr.add_argument("--b", type=int, default=None, help="tree arity (default 2, or the file's value)")
    pr.add_argument("--p", type=float, default=None, help="exponent (default 1, or the file's value)")
    pr.add_argument("--B", type=int, default=None, help="EMD budget (cemd)")
    pr.add_argument("--algorithm", choices=["exact", "fast", "linear"], default=None)
    pr.add_argument("--output", default=None)
    pr.add_argument("--seed", type=int, default=0)

    rc = sub.add_parser("recover", help="recover a synthetic signal with AM-IHT")
    rc.add_argument("--model", choices=["tree", "cemd"], required=True)
    rc.add_argument("--n", type=int, default=None)
    rc.add_argument("--h", type=int, default=None)
    rc.add_argument("--w", type=int, default=None)
    rc.add_argument("--b", type=int, default=2)
    rc.add_argument("--k", type=int, required=True)
    rc.add_argument("--B", type=int, default=0)
    rc.add_argument("--m-factor", type=float, default=None)
    rc.add_argument("--noise", type=float, default=0.0)
    rc.add_argument("--iters", type=int, default=50)
    rc.add_argument("--eps", type=float, default=0.1)
    rc.add_argument("--delta", type=float, default=0.05)
    rc.add_argument("--seed", type=int, default=0)
    rc.add_argument("--output", default=None)

    bn = sub.add_parser("bench", help="time the algorithms and compare with exact solvers")
    bn.add_argument("--suite", choices=sorted(_SUITES), required=True)
    bn.add_argument("--sizes", required=True)
    bn.add_argument("--seeds", type=int, default=3)
    bn.add_argument("--eps", type=float, default=0.1)
    bn.add_argument("--seed", type=int, default=0)
    bn.add_argument("--output", default=None)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _apply_threads()
        if args.command == "project":
            if args.problem.startswith("tree") and args.algorithm is None:
                args.algorithm = "fast" if args.problem == "tree-tail" else "linear"
            return cli_project(args)
        if args.command == "recover":
            return cli_recover(args)
        return cli_bench(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - reported as an internal failure
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
