"""Command line entry point: ``h22strip {verify,decay,spectrum,codec,vrjp}``.

Every run writes its CSV/JSON outputs and a ``manifest.json`` holding the
SHA-256 of the canonical config, the seed, the kernel backend and the hash
of every file written.  Exit codes: 0 success, 1 numerical guard or failed
check, 2 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, graph, measure, sampler, transfer, tree_codec as tc, vrjp
from ._accel import backend_name

OUTPUT_ENV = "H22STRIP_OUTPUT_DIR"
EXIT_OK, EXIT_GUARD, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


GUARD_ERRORS = (measure.MeasureError, transfer.TransferError, sampler.SamplerError,
                tc.CodecError, vrjp.VRJPError, FloatingPointError, np.linalg.LinAlgError)


# ------------------------------------------------------------------ config

@dataclass
class RunConfig:
    seed: int
    base: graph.BaseGraph
    weights: graph.Weights
    lo: int = -2
    hi: int = 6
    sampler: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    deformation: dict = field(default_factory=dict)
    decay: dict = field(default_factory=dict)
    vrjp: dict = field(default_factory=dict)
    output_dir: str = "h22strip_out"
    raw: dict = field(default_factory=dict)

    def sampler_config(self, **over):
        d = {"seed": self.seed, **self.sampler, **over}
        try:
            return sampler.SamplerConfig(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError("sampler", str(exc)) from None

    def grid_spec(self):
        d = dict(self.grid)
        if "x_range" in d and d["x_range"] is not None:
            d["x_range"] = tuple(d["x_range"])
        try:
            return transfer.GridSpec(**d)
        except (TypeError, transfer.TransferError) as exc:
            raise ConfigError("grid", str(exc)) from None

    def deformation_params(self):
        try:
            return measure.DeformationParams(**self.deformation)
        except (TypeError, measure.MeasureError) as exc:
            raise ConfigError("deformation", str(exc)) from None

    def strip(self, lo=None, hi=None):
        return graph.build_strip(self.base, self.lo if lo is None else lo,
                                 self.hi if hi is None else hi, self.weights)

    def digest(self):
        text = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _require(d, key, kind, where):
    if key not in d:
        raise ConfigError(f"{where}{key}", "missing (required)")
    val = d[key]
    if kind is int and (isinstance(val, bool) or not isinstance(val, int)):
        raise ConfigError(f"{where}{key}", f"expected an integer, got {val!r}")
    return val


def _section(d, key):
    val = d.get(key, {})
    if not isinstance(val, dict):
        raise ConfigError(key, "expected an object")
    return val


def parse_config(raw: dict, base_dir: Path | None = None) -> RunConfig:
    """Validate a config dict; errors name the offending field."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a JSON object")
    known = {"seed", "base", "base_file", "strip", "sampler", "grid", "deformation",
             "decay", "vrjp", "output_dir"}
    for k in raw:
        if k not in known:
            raise ConfigError(k, "unknown field")
    seed = _require(raw, "seed", int, "")
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed", "must be a 64-bit unsigned integer")
    if "base_file" in raw:
        path = Path(raw["base_file"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            raise ConfigError("base_file", f"file not found: {path}")
        try:
            base_dict = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("base_file", f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    elif "base" in raw:
        base_dict = _section(raw, "base")
    else:
        raise ConfigError("base", "missing (give 'base' or 'base_file')")
    try:
        base, weights = graph.load_base_config(base_dict)
    except graph.GraphError as exc:
        msg = str(exc)
        name = msg.split(" ")[0] if msg.startswith("weights.") else "base"
        raise ConfigError(name, msg) from None
    except (TypeError, ValueError) as exc:
        raise ConfigError("base", str(exc)) from None
    strip = _section(raw, "strip")
    lo = strip.get("lo", -2)
    hi = strip.get("hi", 6)
    for name, v in (("strip.lo", lo), ("strip.hi", hi)):
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(name, f"expected an integer, got {v!r}")
    if lo > 0 or hi < 0:
        raise ConfigError("strip", f"need lo <= 0 <= hi, got lo={lo}, hi={hi}")
    cfg = RunConfig(seed=seed, base=base, weights=weights, lo=lo, hi=hi,
                    sampler=_section(raw, "sampler"), grid=_section(raw, "grid"),
                    deformation=_section(raw, "deformation"), decay=_section(raw, "decay"),
                    vrjp=_section(raw, "vrjp"),
                    output_dir=str(raw.get("output_dir", "h22strip_out")), raw=raw)
    # fail early on malformed sections
    cfg.sampler_config()
    cfg.grid_spec()
    cfg.deformation_params()
    return cfg


def default_config_text():
    return resources.files("h22strip").joinpath("data/default_config.json").read_text()


def load_config(path=None) -> RunConfig:
    if path is None:
        text, base_dir = default_config_text(), None
    else:
        p = Path(path)
        if not p.exists():
            raise ConfigError("--config", f"file not found: {p}")
        text, base_dir = p.read_text(), p.parent
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<json>", f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_config(raw, base_dir)


# ------------------------------------------------------------------ output

class Output:
    """Collects files for one run and writes them together with the manifest."""

    def __init__(self, directory, command, cfg: RunConfig):
        self.dir = Path(directory)
        self.command = command
        self.cfg = cfg
        self.files = {}

    def csv(self, name, header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        self.files[name] = buf.getvalue()

    def json(self, name, obj):
        self.files[name] = json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"

    def write(self):
        self.dir.mkdir(parents=True, exist_ok=True)
        for name, text in self.files.items():
            (self.dir / name).write_text(text)
        manifest = {
            "command": self.command,
            "config_sha256": self.cfg.digest(),
            "seed": self.cfg.seed,
            "backend": backend_name(),
            "version": __version__,
            "files": {n: hashlib.sha256(t.encode()).hexdigest() for n, t in sorted(self.files.items())},
        }
        (self.dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return manifest


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, (set, frozenset, tuple)):
        return list(o)
    if hasattr(o, "to_dict"):
        return o.to_dict()
    if hasattr(o, "__dataclass_fields__"):
        return {k: getattr(o, k) for k in o.__dataclass_fields__}
    return str(o)


# ---------------------------------------------------------------- commands

def _check(name, ok, **info):
    return {"check": name, "passed": bool(ok), **info}


def run_verify(cfg: RunConfig, out: Output):
    """Fast invariant suite on the configured base graph."""
    rng = np.random.default_rng(cfg.seed)
    checks = []
    base, w = cfg.base, cfg.weights
    small = graph.build_strip(base, 0, max(0, 12 // base.n_vertices - 1), w)
    errs = []
    for _ in range(20):
        t = rng.normal(size=small.n_vertices)
        det, tree_sum = measure.matrix_tree_check(small, t)
        errs.append(abs(det - tree_sum) / det)
    checks.append(_check("matrix_tree", max(errs) <= 1e-10, max_rel_error=max(errs)))

    strip = graph.build_strip(base, -1, 2, w) if base.n_vertices <= 3 else small
    trees = tc.enumerate_spanning_trees(strip, max_vertices=12) if strip.n_vertices <= 12 else []
    worst_cv = worst_loc = worst_rt = 0.0
    for _ in range(5):
        t = rng.normal(size=strip.n_vertices)
        s = rng.normal(size=strip.n_vertices)
        g = measure.to_gradient(strip, t, s)
        t2, s2 = measure.from_gradient(strip, g)
        worst_rt = max(worst_rt, float(np.max(np.abs(t2 - t))), float(np.max(np.abs(s2 - s))))
        lj = measure.log_jacobian(strip, t)
        p = strip.pin_vertex
        for tree in trees:
            lhs = measure.log_density_tree(strip, t, s, tree) + lj
            rhs = -measure.pin_hamiltonian(strip, t[p], s[p]) - measure.grad_hamiltonian(strip, g, tree)
            worst_cv = max(worst_cv, abs(lhs - rhs))
    checks.append(_check("gradient_round_trip", worst_rt <= 1e-10, max_error=worst_rt))
    checks.append(_check("change_of_variables", worst_cv <= 1e-10, max_error=worst_cv))

    alph = tc.alphabet(base)
    lm = measure.LocalModel(base, w, alph)
    for _ in range(5):
        t = rng.normal(size=strip.n_vertices)
        s = rng.normal(size=strip.n_vertices)
        g = measure.to_gradient(strip, t, s)
        for tree in trees[:20]:
            for l in range(0, strip.hi + 1):
                a = measure.interpolated_hamiltonian(strip, g, tree, l)
                b = lm.block_sum(strip, g, tree, l)
                worst_loc = max(worst_loc, abs(a - b) / max(1.0, abs(a)))
    checks.append(_check("local_decomposition", worst_loc <= 1e-10, max_rel_error=worst_loc))

    bad = 0
    counts = []
    for n_levels in range(2, 4):
        st = graph.build_strip(base, 0, n_levels - 1, w)
        if st.n_vertices > 12:
            break
        tr = tc.enumerate_spanning_trees(st, max_vertices=12)
        for tree in tr:
            word = tc.encode(st, tree)
            if tc.decode(word, st, alph) != tree:
                bad += 1
        counts.append((n_levels, len(tr), alph.word_count(n_levels), tc.laplacian_tree_count(st)))
    ok = bad == 0 and all(a == b == c for _, a, b, c in counts)
    checks.append(_check("codec_bijection", ok, failures=bad, counts=counts))

    sv = graph.single_vertex()
    svs = graph.build_strip(sv, 0, 0, graph.Weights.uniform(sv, epsilon=w.epsilon))
    norm = sampler.single_vertex_quadrature(svs)
    checks.append(_check("single_vertex_normalization", abs(norm - 1) <= 1e-6, value=norm))

    model = transfer.TransferModel(base, w, transfer.GridSpec(points_per_dim=9), alph)
    spec = transfer.perron(model.operator("K"))
    sym = transfer.symmetry_defect(model, spec)
    checks.append(_check("perron_positive", spec.lam > 0 and spec.min_entry >= 0
                         and max(spec.residual_right, spec.residual_left) <= 1e-10,
                         lam=spec.lam, min_entry=spec.min_entry))
    checks.append(_check("symmetry_identity", sym <= 1e-6, defect=sym))

    out.json("verify.json", {"checks": checks, "passed": all(c["passed"] for c in checks)})
    out.csv("verify.csv", ["check", "passed"], [(c["check"], int(c["passed"])) for c in checks])
    return EXIT_OK if all(c["passed"] for c in checks) else EXIT_GUARD


def run_decay(cfg: RunConfig, out: Output):
    levels = cfg.decay.get("levels", list(range(0, min(cfg.hi, 8) + 1)))
    strip = cfg.strip()
    sc = cfg.sampler_config()
    curve = sampler.decay_curve(strip, levels, sc)
    out.csv("decay.csv", ["l", "estimate", "stderr", "n_eff"], curve.rows())
    out.json("decay_fit.json", {"slope": curve.slope, "slope_stderr": curve.slope_stderr,
                                "intercept": curve.intercept, "lo": strip.lo, "hi": strip.hi,
                                "acceptance": curve.acceptance,
                                "decreasing": curve.decreasing(),
                                "slope_negative_95": curve.slope_negative()})
    return EXIT_OK


def run_spectrum(cfg: RunConfig, out: Output):
    alph = tc.alphabet(cfg.base)
    model = transfer.TransferModel(cfg.base, cfg.weights, cfg.grid_spec(), alph)
    K = model.operator("K")
    spec = transfer.perron(K)
    mods = transfer.leading_moduli(K, 3)
    sym = transfer.symmetry_defect(model, spec)
    c4, lin = transfer.c4_estimate(model, spec)
    plus = transfer.perron(model.operator("K_plus"))
    out.json("spectrum.json", {
        "rows": model.size, "lambda": spec.lam, "lambda_plus": plus.lam,
        "leading_moduli": mods, "second_eigenvalue_abs": float(mods[1]),
        "gap_ratio": spec.gap_ratio,
        "gap_fit_r2": spec.gap_fit_r2, "residual_right": spec.residual_right,
        "residual_left": spec.residual_left, "min_entry": spec.min_entry,
        "symmetry_defect": sym, "c4": c4, "c4_linearity_error": lin,
        "decay_rate_per_level": -math.log(spec.lam)})
    out.csv("gap_norms.csv", ["n", "norm"], [(i + 1, v) for i, v in enumerate(spec.norms)])
    return EXIT_OK


def run_codec(cfg: RunConfig, out: Output):
    alph = tc.alphabet(cfg.base)
    rows = []
    for n_levels in range(1, 6):
        st = graph.build_strip(cfg.base, 0, n_levels - 1, cfg.weights)
        lap = tc.laplacian_tree_count(st)
        rows.append((n_levels, alph.word_count(n_levels), lap))
    out.json("alphabet.json", json.loads(alph.to_json()))
    out.json("codec_report.json", {"letters": len(alph.letters), "pairs": alph.n_pairs,
                                   "diameter": alph.diameter, "sizes_used": list(alph.sizes_used)})
    out.csv("word_counts.csv", ["levels", "words", "trees"], rows)
    return EXIT_OK if all(a == b for _, a, b in rows) else EXIT_GUARD


def run_vrjp(cfg: RunConfig, out: Output, horizon, runs, tmax, seed):
    vc = cfg.vrjp
    horizon = float(vc.get("horizon", 50.0) if horizon is None else horizon)
    runs = int(vc.get("runs", 200) if runs is None else runs)
    tmax = int(vc.get("tmax", 3) if tmax is None else tmax)
    half = int(vc.get("half_length", 60))
    pg = vrjp.PinnedGraph(graph.build_strip(cfg.base, -half, half, cfg.weights))
    rows = []
    occ = np.zeros(half + 1)
    ss = np.random.SeedSequence(seed).generate_state(runs)
    for r in range(runs):
        tr = vrjp.simulate_vrjp(pg, horizon, int(ss[r]))
        sk = vrjp.skeleton(tr)
        lev = np.abs(pg.level[sk])
        rows.append((r, tr.n_jumps, int(lev.max()), pg.label(int(sk[-1]))))
        occ += np.bincount(np.abs(pg.level[sk[1:]]), minlength=half + 1)[: half + 1]
    out.csv("trajectories.csv", ["run", "n_jumps", "max_level", "final_vertex"], rows)
    total = occ.sum()
    out.csv("occupation.csv", ["level", "fraction"],
            [(i, occ[i] / total if total else 0.0) for i in range(half + 1)])
    sv_lo, sv_hi = vc.get("mixing_strip", [0, 0])
    small = vrjp.PinnedGraph(graph.build_strip(cfg.base, sv_lo, sv_hi, cfg.weights))
    if small.n_vertices <= 4:
        sc = cfg.sampler_config(samples=int(vc.get("n_env", 2000)), thin=5)
        rep = vrjp.mixing_check(small, tmax, int(vc.get("n_vrjp", 20000)),
                                int(vc.get("n_env", 2000)), sc, seed)
        out.json("mixing.json", rep)
        return EXIT_OK if rep.passed else EXIT_GUARD
    out.json("mixing.json", {"skipped": "pinned graph has more than 4 vertices"})
    return EXIT_OK


# -------------------------------------------------------------------- main

def build_parser():
    p = argparse.ArgumentParser(prog="h22strip", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("verify", "run the invariant suite"),
                        ("decay", "decay-curve experiment"),
                        ("spectrum", "transfer-operator diagnostics"),
                        ("codec", "spanning-tree alphabet report"),
                        ("vrjp", "reinforced-jump-process experiments")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON run config (default: shipped config)")
        sp.add_argument("--output-dir", help=f"output directory (env {OUTPUT_ENV} overrides config)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        if name == "vrjp":
            sp.add_argument("--horizon", type=float)
            sp.add_argument("--runs", type=int)
            sp.add_argument("--tmax", type=int)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed", "must be non-negative")
            cfg.raw = {**cfg.raw, "seed": args.seed}
            cfg.seed = args.seed
        outdir = args.output_dir or os.environ.get(OUTPUT_ENV) or cfg.output_dir
        out = Output(Path(outdir) / args.command, args.command, cfg)
        if args.command == "vrjp":
            for flag in ("horizon", "runs", "tmax"):
                v = getattr(args, flag)
                if v is not None and v <= 0:
                    raise ConfigError(f"--{flag}", "must be positive")
            if args.tmax is not None and args.tmax > 3:
                raise ConfigError("--tmax", "must be at most 3")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "verify":
            code = run_verify(cfg, out)
        elif args.command == "decay":
            code = run_decay(cfg, out)
        elif args.command == "spectrum":
            code = run_spectrum(cfg, out)
        elif args.command == "codec":
            code = run_codec(cfg, out)
        else:
            code = run_vrjp(cfg, out, args.horizon, args.runs, args.tmax, cfg.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GUARD_ERRORS as exc:
        print(f"numerical guard tripped [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return EXIT_GUARD
    out.write()
    status = "ok" if code == EXIT_OK else "checks failed"
    print(f"{args.command}: {status}; outputs in {out.dir}")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
