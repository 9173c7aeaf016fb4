"""Command-line front end: config ingestion, experiment orchestration, CSV.

Config files are JSON; flags override file values.  All randomness flows
from the single --seed through the counter-based driver, so identical
(config, seed) pairs produce byte-identical CSV outputs.  Exit codes:
0 success, 1 validation error, 2 numerical degeneracy; the last stdout
line is always machine readable: status=<ok|invalid|degenerate>.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import hedging, models, riccati, sde
from .algebra import (
    EMPTY_WORD,
    GradedTensor,
    Weight,
    antipode,
    concat_product,
    dual_pairing,
    format_tensor,
    format_word,
    parse_tensor,
    parse_word,
    shuffle_product,
    weight_check,
    weighted_norms,
)
from .signature import PathGrid, signature_piecewise_linear, simulate_brownian_grid


def _fmt(value) -> str:
    if value is None:
        return "nan"
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _write_rows(path: str, header: list[str], rows: list[tuple]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


class CliError(ValueError):
    """Configuration or validation problem; maps to exit code 1."""


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------

_DEFAULTS = {
    "T": 1.0,
    "steps": 128,
    "paths": 4096,
    "trunc": None,
    "s0": 1.0,
    "seed": None,
    "out": ".",
    "model": "black_scholes",
    "sigma": 0.2,
    "sigma0": 0.2,
    "sigma1": 0.1,
}


def load_config(path: str | None) -> dict:
    cfg = dict(_DEFAULTS)
    if path:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise CliError("config root must be a JSON object")
        cfg.update(data)
    return cfg


def _weight_from_spec(spec) -> Weight:
    if spec is None:
        return Weight.geometric(2.0)
    if isinstance(spec, dict):
        kind = spec.get("kind")
        if kind == "geometric":
            return Weight.geometric(float(spec.get("r", 2.0)))
        if kind == "polynomial":
            return Weight.polynomial(float(spec.get("alpha", 1.0)))
        if kind == "constant":
            return Weight.constant()
    raise CliError(f"bad weight spec {spec!r}")


def resolve_model(cfg: dict):
    """Return (ell, eta, weight, name) from a preset name or an inline ell."""
    spec = cfg["model"]
    if isinstance(spec, str):
        spec = {"name": spec}
    if not isinstance(spec, dict):
        raise CliError(f"bad model spec {spec!r}")
    if "ell_file" in spec or "ell" in spec:
        d = int(spec.get("d", 1))
        if "ell_file" in spec:
            try:
                with open(spec["ell_file"], "r", encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise CliError(f"cannot read ell file: {exc}") from exc
        else:
            text = spec["ell"]
        ell = parse_tensor(text, d)
        eta = np.asarray(spec.get("eta", models._unit(d, 1)), dtype=float)
        weight = _weight_from_spec(spec.get("weight"))
        return ell, eta, weight, "inline"
    name = spec.get("name", cfg["model"])
    try:
        pre = models.preset(name, sigma=float(cfg["sigma"]),
                            sigma0=float(cfg["sigma0"]), sigma1=float(cfg["sigma1"]))
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    if pre.metadata_only:
        raise CliError(f"preset {name} is metadata-only and cannot be simulated")
    return pre.ell, pre.eta, pre.weight, name


def _require_seed(cfg: dict) -> int:
    if cfg.get("seed") is None:
        raise CliError("seed is mandatory: pass --seed or set it in the config")
    seed = int(cfg["seed"])
    if seed < 0:
        raise CliError("seed must be a non-negative integer")
    return seed


def _params(cfg: dict, ell: GradedTensor, eta, weight) -> sde.SigVolParams:
    return sde.SigVolParams(ell=ell, weight=weight, s0=float(cfg["s0"]), eta=eta,
                            horizon=float(cfg["T"]), steps=int(cfg["steps"]))


def _parse_payoff(text) -> tuple[str, dict]:
    if isinstance(text, dict):
        return text["kind"], {k: float(v) for k, v in text.items() if k != "kind"}
    kind, _, rest = str(text).partition(":")
    kind = kind.strip()
    params: dict = {}
    if rest:
        for item in rest.split(","):
            key, _, val = item.partition("=")
            params[{"K": "strike"}.get(key.strip(), key.strip())] = float(val)
    if kind in ("call", "digital", "asian") and "strike" not in params:
        raise CliError(f"payoff {kind} needs a strike, e.g. {kind}:K=1.0")
    if kind not in hedging.PAYOFF_KINDS:
        raise CliError(f"unknown payoff kind {kind!r}")
    return kind, params


def _parse_direction(cfg: dict, d: int) -> riccati.RiccatiState:
    u_x = cfg.get("uX")
    pairs: dict = {}
    raw = cfg.get("u")
    if raw:
        if isinstance(raw, str):
            entries = [item for item in raw.split(",") if item.strip()]
            for item in entries:
                word_text, _, coeff = item.partition(":")
                pairs[parse_word(word_text)] = float(coeff)
        else:
            for word_text, coeff in raw:
                pairs[parse_word(str(word_text))] = float(coeff)
    deg = max((len(w) for w in pairs), default=0)
    sig = GradedTensor(d, deg, pairs)
    return riccati.RiccatiState(sig, None if u_x is None else float(u_x))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_selftest(cfg: dict, out: str) -> int:
    rng = np.random.default_rng(12345)
    d, trunc = 2, 4

    def random_tensor(max_len=2):
        words = [()] + [tuple(rng.integers(0, d + 1, size=n)) for n in (1, 2) for _ in range(2)]
        return GradedTensor(d, max_len, {w: float(rng.normal()) for w in words[: max_len + 2]})

    e1 = GradedTensor.basis(d, 1, (1,))
    sq = shuffle_product(e1, e1, 2)
    assert sq.coeffs == {(1, 1): 2.0}, "e1 shuffle e1 must be exactly 2 e11"
    checks = [("shuffle_normalisation", True)]
    for _ in range(20):
        a, b = random_tensor(), random_tensor()
        c = random_tensor()
        lhs = shuffle_product(a, b, trunc)
        rhs = shuffle_product(b, a, trunc)
        ok = lhs.allclose(rhs, 1e-12)
        assoc = shuffle_product(lhs, c, trunc).allclose(
            shuffle_product(a, shuffle_product(b, c, trunc), trunc), 1e-12)
        inv = antipode(antipode(a)).allclose(a)
        unit = concat_product(GradedTensor.unit(d, trunc), a, trunc).allclose(a)
        w = Weight.geometric(2.0)
        na, nb = weighted_norms(a, w)[0], weighted_norms(b, w)[0]
        banach = weighted_norms(concat_product(a, b, trunc), w)[0] <= na * nb + 1e-12
        cs = abs(dual_pairing(a, b)) <= weighted_norms(a, w)[1] * weighted_norms(b, w)[2] + 1e-12
        if not (ok and assoc and inv and unit and banach and cs):
            print("status=invalid")
            return 1
    checks.append(("shuffle_concat_antipode_norms", True))
    times = np.linspace(0.0, 1.0, 9)
    vals = rng.normal(size=(9, d)) * 0.3
    vals[0] = 0.0
    path = PathGrid.from_brownian(times, np.cumsum(vals, axis=0) - vals[0])
    stream = signature_piecewise_linear(path, 4)
    mid = 4
    left = signature_piecewise_linear(PathGrid(times[: mid + 1], path.values[: mid + 1]), 4)
    right_vals = path.values[mid:].copy()
    chen = concat_product(left.terminal, _segment_chain(right_vals, 4), 4)
    checks.append(("chen_identity", chen.allclose(stream.terminal, 1e-12)))
    rep = weight_check(Weight.geometric(2.0), 10)
    checks.append(("weight_check", rep.monotone and rep.w0_is_one))
    rows = [(name, "1" if ok else "0") for name, ok in checks]
    _write_rows(os.path.join(out, "selftest.csv"), ["check", "ok"], rows)
    if all(ok for _, ok in checks):
        print("status=ok")
        return 0
    print("status=invalid")
    return 1


def _segment_chain(values: np.ndarray, trunc: int) -> GradedTensor:
    from .signature import segment_exponential

    acc = GradedTensor.unit(values.shape[1] - 1, trunc)
    for dx in np.diff(values, axis=0):
        acc = concat_product(acc, segment_exponential(dx, trunc), trunc)
    return acc


def _cmd_simulate(cfg: dict, out: str) -> int:
    seed = _require_seed(cfg)
    ell, eta, weight, _ = resolve_model(cfg)
    params = _params(cfg, ell, eta, weight)
    paths = simulate_brownian_grid(params.dim, params.horizon, params.steps,
                                   int(cfg["paths"]), seed)
    prices = sde.simulate_price(params, paths)
    with open(os.path.join(out, "paths.csv"), "w", encoding="utf-8", newline="\n") as fh:
        sde.write_price_csv(prices, fh)
    report = sde.martingale_check(prices)
    print(f"mean_ST={report.mean_terminal:.17g} se={report.se:.17g} z={report.z_score:.17g}")
    print("status=ok")
    return 0


def _cmd_hypotheses(cfg: dict, out: str) -> int:
    seed = _require_seed(cfg)
    ell, eta, weight, name = resolve_model(cfg)
    params = _params(cfg, ell, eta, weight)
    h1 = sde.check_H1(ell, weight)
    lam = float(cfg.get("lambda", 1.0))
    h3 = sde.estimate_H3(params, lam, int(cfg["paths"]), seed)
    paths = simulate_brownian_grid(params.dim, params.horizon, params.steps,
                                   min(int(cfg["paths"]), 20000), seed)
    mart = sde.martingale_check(sde.simulate_price(params, paths))
    with open(os.path.join(out, "ell.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_tensor(ell))
    rows = [
        ("model", name, ""),
        ("H1.value", h1.value, "exact for finite support"),
        ("H1.divergent", int(h1.divergent), ""),
        ("H3.lambda", lam, ""),
        ("H3.mean", h3.mean, "MC estimate; finiteness not decidable by MC"),
        ("H3.ci_halfwidth", h3.ci_halfwidth, "95% normal CI"),
        ("H3.heavy_tail", int(h3.suspicious_heavy_tail), "top 0.1% carries >50%"),
        ("martingale.mean_ST", mart.mean_terminal, ""),
        ("martingale.se", mart.se, ""),
        ("martingale.z", mart.z_score, ""),
    ]
    _write_rows(os.path.join(out, "hypotheses.csv"), ["key", "value", "note"], rows)
    print("status=ok")
    return 0


def _cmd_transform(cfg: dict, out: str) -> int:
    ell, eta, weight, _ = resolve_model(cfg)
    d = ell.dim
    state = _parse_direction(cfg, d)
    extended = state.u_x is not None and state.u_x != 0.0
    window = 2 * state.support_degree + (ell.support_degree if extended else 0)
    window = max(window, 2 * ell.support_degree if extended else 0)
    trunc = int(cfg["trunc"]) if cfg.get("trunc") is not None else max(window, state.support_degree, 2)
    if trunc < window:
        raise CliError(f"truncation {trunc} below the shuffle window {window}")
    table = riccati.build_generator(trunc, d, (ell, eta) if extended else None)
    horizon = float(cfg["T"])
    tol = float(cfg.get("tol", 1e-10))
    threshold = float(cfg.get("threshold", 1e6))
    outcome = riccati.integrate_flow(state, horizon, table, tol=tol,
                                     explosion_threshold=threshold, weight=weight,
                                     record=True)
    lines = ["tau,component_word,psi_value"]
    for tau, vec in outcome.trace:
        for i, label in enumerate(table.labels):
            if vec[i] != 0.0:
                word = label if label == riccati.X_LABEL else format_word(label)
                lines.append(f"{tau:.17g},{word},{vec[i]:.17g}")
    if outcome.solved:
        psi0 = outcome.state.sig[EMPTY_WORD]
        lam0 = math.exp(psi0 + (outcome.state.u_x * math.log(float(cfg["s0"])) if extended else 0.0))
        lines.append(f"lambda0={lam0:.17g}")
    else:
        lines.append(f"exploded_at={outcome.t_star:.17g}")
    with open(os.path.join(out, "transform.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    if outcome.solved and cfg.get("mc_check"):
        seed = _require_seed(cfg)
        mc = riccati.mc_transform(state, table, horizon, int(cfg["steps"]),
                                  int(cfg.get("mc_paths", cfg["paths"])), seed,
                                  s0=float(cfg["s0"]))
        print(f"lambda0={lam0:.17g} mc={mc.mean:.17g} mc_se={mc.se:.17g}")
    elif outcome.solved:
        print(f"lambda0={lam0:.17g}")
    if not outcome.solved:
        print(f"exploded_at={outcome.t_star:.17g}")
        print("status=degenerate")
        return 2
    print("status=ok")
    return 0


def _cmd_hedge(cfg: dict, out: str) -> int:
    seed = _require_seed(cfg)
    ell, eta, weight, name = resolve_model(cfg)
    params = _params(cfg, ell, eta, weight)
    kind, pay_params = _parse_payoff(cfg.get("payoff", "call:K=1.0"))
    hedge_cfg = cfg.get("hedge", {})
    depth = int(hedge_cfg.get("integrand_depth", 2))
    window = hedge_cfg.get("residual_window", [depth, depth + 1])
    strikes = hedge_cfg.get("static_strikes")
    ridge = hedge_cfg.get("ridge")
    basis = hedging.HedgeBasis(integrand_depth=depth,
                               residual_window=(int(window[0]), int(window[1])),
                               static_strikes=None if strikes is None else tuple(strikes),
                               ridge=None if ridge is None else float(ridge))
    trunc_needed = max(basis.residual_window[1], depth, ell.support_degree)
    if cfg.get("trunc") is not None and int(cfg["trunc"]) < trunc_needed:
        raise CliError(f"truncation {cfg['trunc']} below required window {trunc_needed}")
    data = hedging.simulate_hedge_dataset(params, basis, kind, pay_params,
                                          int(cfg["paths"]), seed)
    result = hedging.gkw_project(data.payoffs, data.design, basis, weight=weight)
    rows = [("meta", "model", name), ("meta", "payoff", kind),
            ("meta", "paths", cfg["paths"]), ("meta", "seed", seed),
            ("price", "constant", result.price)]
    rows += [("dynamic_coeff", format_word(w), c) for w, c in result.dynamic_coeffs.items()]
    rows += [("static_coeff", label, c) for label, c in result.static_coeffs.items()]
    rows += [("residual_coeff", format_word(w), c) for w, c in result.residual_coeffs.items()]
    rows += [("diagnostic", "residual_norm", result.residual_norm),
             ("diagnostic", "residual_norm_se", result.residual_norm_se),
             ("diagnostic", "dynamic_residual_norm", result.dynamic_residual_norm),
             ("diagnostic", "kappa_bound", result.kappa_bound),
             ("diagnostic", "gram_min_eigenvalue", result.gram_min_eigenvalue),
             ("diagnostic", "payoff_l2", result.payoff_l2),
             ("diagnostic", "dropped_words",
              ";".join(format_word(w) for w in result.dropped_words) or "none")]
    _write_rows(os.path.join(out, "hedge.csv"), ["section", "key", "value"], rows)
    print(f"price={result.price:.17g} residual_norm={result.residual_norm:.17g}")
    print("status=ok")
    return 0


_DOCUMENTED_DEPTHS = [
    ("black_scholes", "0", "1"),
    ("first_order", "1", "2"),
    ("heston_meta", "2", "4"),
    ("rough_bergomi_approx", "inf", "inf"),
    ("quintic_ou_approx", "5", "undocumented"),
    ("guyon_lekeufack_approx", "kernel_dependent", "kernel_dependent"),
]


def _cmd_depth_report(cfg: dict, out: str) -> int:
    seed = _require_seed(cfg)
    ell, eta, weight, name = resolve_model(cfg)
    params = _params(cfg, ell, eta, weight)
    kind, pay_params = _parse_payoff(cfg.get("payoff", "asian:K=1.0"))
    depths = [int(v) for v in cfg.get("depths", [0, 1, 2])]
    basis = hedging.HedgeBasis(integrand_depth=max(depths),
                               residual_window=(max(depths), max(depths) + 1))
    rows = [("depth_table", f"{m}.N_star", n) for m, n, _ in _DOCUMENTED_DEPTHS]
    rows += [("depth_table", f"{m}.K", k) for m, _, k in _DOCUMENTED_DEPTHS]
    scan = hedging.depth_scan(params, kind, pay_params, depths, int(cfg["paths"]),
                              seed, basis=basis, weight=weight)
    for row in scan:
        rows.append(("scan", f"depth_{row.depth}.residual_norm", row.residual_norm))
        rows.append(("scan", f"depth_{row.depth}.se", row.se))
    rows.append(("meta", "model", name))
    rows.append(("meta", "payoff", kind))
    _write_rows(os.path.join(out, "depth_report.csv"), ["section", "key", "value"], rows)
    print("status=ok")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sigvol",
                                     description="signature volatility model toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("selftest", "simulate", "hypotheses", "transform", "hedge", "depth-report"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--paths", type=int, default=None)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--trunc", type=int, default=None)
        p.add_argument("--model", default=None)
        p.add_argument("--sigma", type=float, default=None)
        p.add_argument("--sigma0", type=float, default=None)
        p.add_argument("--sigma1", type=float, default=None)
        p.add_argument("--T", type=float, default=None, dest="T")
        p.add_argument("--s0", type=float, default=None)
        if name == "transform":
            p.add_argument("--uX", type=float, default=None, dest="uX")
            p.add_argument("--u", default=None)
            p.add_argument("--tol", type=float, default=None)
            p.add_argument("--threshold", type=float, default=None)
            p.add_argument("--mc-check", action="store_true", dest="mc_check")
            p.add_argument("--mc-paths", type=int, default=None, dest="mc_paths")
        if name in ("hedge", "depth-report"):
            p.add_argument("--payoff", default=None)
        if name == "hedge":
            p.add_argument("--integrand-depth", type=int, default=None)
            p.add_argument("--window", default=None, help="residual window as 'low,high'")
            p.add_argument("--ridge", type=float, default=None)
            p.add_argument("--strikes", default=None)
        if name == "depth-report":
            p.add_argument("--depths", default=None, help="comma separated depths")
        if name == "hypotheses":
            p.add_argument("--lambda", type=float, default=None, dest="lam")
    return parser


def _merge_flags(cfg: dict, args: argparse.Namespace) -> dict:
    direct = ("seed", "out", "paths", "steps", "trunc", "model", "sigma", "sigma0",
              "sigma1", "T", "s0", "payoff", "uX", "u", "tol", "threshold",
              "mc_paths", "mc_check")
    for key in direct:
        val = getattr(args, key, None)
        if val is not None and val is not False:
            cfg[key] = val
    if getattr(args, "lam", None) is not None:
        cfg["lambda"] = args.lam
    hedge_cfg = dict(cfg.get("hedge", {}))
    if getattr(args, "integrand_depth", None) is not None:
        hedge_cfg["integrand_depth"] = args.integrand_depth
    if getattr(args, "window", None) is not None:
        lo, hi = args.window.split(",")
        hedge_cfg["residual_window"] = [int(lo), int(hi)]
    if getattr(args, "ridge", None) is not None:
        hedge_cfg["ridge"] = args.ridge
    if getattr(args, "strikes", None) is not None:
        hedge_cfg["static_strikes"] = [float(s) for s in args.strikes.split(",")]
    if hedge_cfg:
        cfg["hedge"] = hedge_cfg
    if getattr(args, "depths", None) is not None:
        cfg["depths"] = [int(v) for v in args.depths.split(",")]
    return cfg


_COMMANDS = {
    "selftest": _cmd_selftest,
    "simulate": _cmd_simulate,
    "hypotheses": _cmd_hypotheses,
    "transform": _cmd_transform,
    "hedge": _cmd_hedge,
    "depth-report": _cmd_depth_report,
}


def execute(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit:
        print("status=invalid")
        return 1
    try:
        cfg = _merge_flags(load_config(args.config), args)
        out = cfg.get("out") or "."
        os.makedirs(out, exist_ok=True)
        return _COMMANDS[args.command](cfg, out)
    except (CliError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        print("status=invalid")
        return 1
    except (hedging.DegenerateGram, riccati.RiccatiExplosion) as exc:
        print(f"degenerate: {exc}", file=sys.stderr)
        print("status=degenerate")
        return 2


def main() -> None:
    sys.exit(execute(sys.argv[1:]))


if __name__ == "__main__":
    main()
