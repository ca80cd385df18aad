"""Command-line entry point: solve, robust, fair, simulate, generate."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import List, Optional

from .experiments import EXISTENCE, WEIGHT, PolicyConfig, RealizationConfig, run_experiment
from .fairness import (baselines, classify_sensitized, fairness_report, gamma_interval,
                       solve_variable_gamma, solve_weighted_fair)
from .instance import InstanceError, generate_instance, load_instance, serialize_instance
from .matchopt import PICEF, PITSP, FormulationConfig, InfeasibleError, clear
from .robust_exist import existence_report, solve_robust_existence
from .robust_weight import (solve_robust_weight_constant, solve_robust_weight_variable,
                            weight_report)

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE = 0, 1, 2

logger = logging.getLogger("robustkex")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _formulation_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("instance", help="instance JSON file")
    p.add_argument("--formulation", choices=(PICEF, PITSP), default=PICEF)
    p.add_argument("--cycle-cap", type=int, default=3, help="K")
    p.add_argument("--chain-cap", type=int, default=4, help="L")
    p.add_argument("--min-chain-len", type=int, default=0)
    p.add_argument("--backend", choices=("builtin", "highs"), default="builtin")


def _output_flags(p: argparse.ArgumentParser, formats=("json",)) -> None:
    p.add_argument("--out", help="write output here instead of stdout")
    p.add_argument("--format", choices=formats, default="json")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="robustkex", description="Robust kidney exchange clearing.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="deterministic clearing")
    _formulation_flags(p)
    _output_flags(p)

    p = sub.add_parser("robust", help="edge-weight or edge-existence robust clearing")
    _formulation_flags(p)
    p.add_argument("--model", choices=(WEIGHT, EXISTENCE), default=WEIGHT)
    p.add_argument("--gamma", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--pricing", action="store_true", help="branch-and-price (weight model)")
    _output_flags(p)

    p = sub.add_parser("fair", help="weighted fairness for highly sensitized patients")
    _formulation_flags(p)
    p.add_argument("--tau", type=float, default=0.8)
    p.add_argument("--gamma-weight", type=float)
    p.add_argument("--pof-max", type=float, help="POF cap p (variable weight mode)")
    p.add_argument("--pf-min", type=float, help="%%F target f (variable weight mode)")
    _output_flags(p)

    p = sub.add_parser("simulate", help="robust versus non-robust realization trials")
    _formulation_flags(p)
    p.add_argument("--mode", choices=(WEIGHT, EXISTENCE), default=EXISTENCE)
    p.add_argument("--trials", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha-frac", type=float, default=0.5)
    p.add_argument("--gamma-fail", type=int, default=1)
    p.add_argument("--gamma", type=float, help="robust budget (default: gamma-fail, or 1 in weight mode)")
    p.add_argument("--epsilon", type=float, help="protection level (weight mode)")
    p.add_argument("--bins", type=int, default=40)
    p.add_argument("--jobs", type=int, default=1)
    _output_flags(p, ("json", "csv"))

    p = sub.add_parser("generate", help="random instance")
    p.add_argument("--pairs", type=int, required=True)
    p.add_argument("--ndds", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    _output_flags(p)
    return parser


def _config(a) -> FormulationConfig:
    try:
        return FormulationConfig(a.formulation, a.cycle_cap, a.chain_cap, a.min_chain_len, a.backend)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _emit(a, text: str) -> None:
    if not text.endswith("\n"):
        text += "\n"
    if a.out:
        with open(a.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def cmd_solve(a) -> int:
    cfg = _config(a)
    g = load_instance(a.instance)
    m = clear(g, cfg)
    _emit(a, _dump(m.to_dict()))
    return EXIT_OK


def cmd_robust(a) -> int:
    cfg = _config(a)
    if a.model == WEIGHT:
        if (a.gamma is None) == (a.epsilon is None):
            raise UsageError("the weight model needs exactly one of --gamma and --epsilon")
        if a.epsilon is not None and a.pricing:
            raise UsageError("--pricing applies to a constant --gamma only")
    elif a.gamma is None or a.epsilon is not None or a.pricing:
        raise UsageError("the existence model takes --gamma only")
    if a.gamma is not None and a.gamma < 0:
        raise UsageError("--gamma must be >= 0")
    if a.epsilon is not None and not 0 < a.epsilon <= 1:
        raise UsageError("--epsilon must lie in (0, 1]")
    # the existence model is always built on pitsp; the weight model needs picef
    if a.model == WEIGHT and cfg.formulation != PICEF:
        raise UsageError("the weight model is built on picef")
    if a.model == EXISTENCE and cfg.min_chain_len:
        raise UsageError("the existence model takes no minimum chain length")
    g = load_instance(a.instance)
    if a.model == EXISTENCE:
        m = solve_robust_existence(g, cfg, a.gamma)
        _emit(a, _dump(existence_report(m, a.gamma)))
    elif a.epsilon is not None:
        m = solve_robust_weight_variable(g, cfg, a.epsilon)
        _emit(a, _dump(weight_report(m, m.info.get("gamma", 0.0), a.epsilon)))
    else:
        m = solve_robust_weight_constant(g, cfg, a.gamma, pricing=a.pricing)
        _emit(a, _dump(weight_report(m, a.gamma)))
    return EXIT_OK


def cmd_fair(a) -> int:
    cfg = _config(a)
    if not 0 <= a.tau <= 1:
        raise UsageError("--tau must lie in [0, 1]")
    variable = a.pof_max is not None or a.pf_min is not None
    if variable == (a.gamma_weight is not None):
        raise UsageError("give either --gamma-weight or --pof-max/--pf-min")
    if a.gamma_weight is not None and a.gamma_weight < 0:
        raise UsageError("--gamma-weight must be >= 0")
    g = load_instance(a.instance)
    part = classify_sensitized(g, a.tau)
    base = baselines(g, cfg, part)
    if variable:
        f = a.pf_min or 0.0
        p = a.pof_max or 0.0
        if not (0 <= f < 1 and 0 <= p < 1):
            raise UsageError("--pof-max and --pf-min must lie in [0, 1)")
        if base.max_uh <= 0:
            raise InfeasibleError("no highly sensitized utility is attainable")
        interval = gamma_interval(f, p, base.max_ul, base.max_uh)
        if interval is None:
            raise InfeasibleError("the %F target and POF cap admit no common weight")
        m = solve_variable_gamma(g, cfg, interval, part=part)
        gamma = m.info["gamma"]
    else:
        gamma = a.gamma_weight
        m = solve_weighted_fair(g, cfg, gamma, part=part)
    _emit(a, _dump(fairness_report(m, part, base, gamma)))
    return EXIT_OK


def cmd_simulate(a) -> int:
    cfg = _config(a)
    try:
        rc = RealizationConfig(a.mode, a.alpha_frac, a.gamma_fail, a.trials, a.seed, a.bins)
        policy = PolicyConfig(cfg, a.gamma, a.epsilon)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if a.mode == EXISTENCE and a.epsilon is not None:
        raise UsageError("--epsilon applies to weight mode only")
    if a.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    g = load_instance(a.instance)
    rep = run_experiment(g, policy, rc, jobs=a.jobs)
    if rep.skipped:
        logger.warning("instance skipped: %s", rep.skip_reason)
    _emit(a, rep.to_csv() if a.format == "csv" else rep.to_json())
    return EXIT_OK


def cmd_generate(a) -> int:
    if a.pairs < 0 or a.ndds < 0:
        raise UsageError("--pairs and --ndds must be >= 0")
    _emit(a, serialize_instance(generate_instance(a.pairs, a.ndds, a.seed)))
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "robust": cmd_robust, "fair": cmd_fair,
            "simulate": cmd_simulate, "generate": cmd_generate}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[a.command](a)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InstanceError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
