"""Command-line entry point: ``abscontrol {synthesize,abstract,solve,simulate,check}``."""

import argparse
import json
import logging
import os
from pathlib import Path
import sys

import numpy as np

from . import serialization as ser
from .abstraction import (AbstractionError, canonical_refinement_witness, check_simulation,
                          cons_abs, concrete_step_covered)
from .game import PropertyAutomaton, reduce_reach, solve_finite_game
from .synthesis import ExtractionError, LeftDomainError, SoundnessError, simulate, synthesize

EXIT_OK, EXIT_ERROR, EXIT_NO_WIN = 0, 1, 2
JOBS_ENV = "ABSCONTROL_JOBS"

log = logging.getLogger("abscontrol")


def _default_jobs():
    try:
        return max(1, int(os.environ.get(JOBS_ENV, "1")))
    except ValueError:
        return 1


def build_parser():
    parser = argparse.ArgumentParser(prog="abscontrol", description=__doc__)
    parser.add_argument("--seed", type=int, default=0, help="seed for all sampling")
    parser.add_argument("--jobs", type=int, default=_default_jobs(),
                        help=f"parallel workers for abstraction (default ${JOBS_ENV} or 1)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="run the refinement loop")
    p.add_argument("problem")
    p.add_argument("--iterations", type=int, help="override max_iterations")
    p.add_argument("--epsilon", help="override epsilon0 (rational, e.g. 1/10)")
    p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("abstract", help="write one abstraction as a finite-system file")
    p.add_argument("problem")
    p.add_argument("--epsilon", help="grid width (default epsilon0)")
    p.add_argument("--out", help="output file (default stdout)")

    p = sub.add_parser("solve", help="solve a reachability game on a finite-system file")
    p.add_argument("system")
    p.add_argument("--start", help="start state name (default: file's start)")
    p.add_argument("--out", help="write cost and strategy as JSON")

    p = sub.add_parser("simulate", help="replay an input sequence")
    p.add_argument("problem")
    p.add_argument("--inputs", required=True, help="zeros(N), a JSON list, or a CSV/JSON file")
    p.add_argument("--x0", help="comma-separated initial state (default: problem x0)")
    p.add_argument("--out", help="CSV output (default stdout)")

    p = sub.add_parser("check", help="run invariant checks on a problem")
    p.add_argument("problem")
    p.add_argument("--epsilon", help="coarse grid width (default epsilon0)")
    p.add_argument("--samples", type=int, default=1000)
    return parser


def _epsilon_arg(text, params):
    if text is None:
        return list(params.epsilon0)
    return [ser.as_fraction(text)] * len(params.epsilon0)


def _abstract_kwargs(params, iteration=0):
    kw = {"merge": params.merge}
    if params.input_counts is not None:
        f = 2 ** iteration if params.refine_inputs else 1
        kw["input_counts"] = [c * f for c in params.input_counts]
    return kw


def cmd_synthesize(args):
    system, prop, params = ser.parse_problem(args.problem)
    eps = _epsilon_arg(args.epsilon, params)
    iterations = args.iterations or params.max_iterations
    reports = synthesize(system, prop, params.x0, eps, iterations,
                         input_counts=params.input_counts, refine_inputs=params.refine_inputs,
                         merge=params.merge, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "reports.json").write_text(ser.dumps_reports(reports))
    (out / "timings.json").write_text(json.dumps([r.wall_times for r in reports], indent=2) + "\n")
    for r in reports:
        if r.trajectory is not None:
            (out / f"trajectory_{r.iteration}.csv").write_text(ser.trajectory_to_csv(r.trajectory))
        cost = "inf" if not r.winning else f"{r.concrete_cost:.6g}"
        print(f"iteration {r.iteration}: eps={','.join(str(e) for e in r.epsilon)} "
              f"abstract={r.abstract_cost:.6g} concrete={cost} steps={r.steps} "
              f"states={r.abstract_state_count}")
    return EXIT_OK if any(r.winning for r in reports) else EXIT_NO_WIN


def cmd_abstract(args):
    system, prop, params = ser.parse_problem(args.problem)
    eps = _epsilon_arg(args.epsilon, params)
    res = cons_abs(system, eps, params.x0, jobs=args.jobs, **_abstract_kwargs(params))
    doc = ser.finite_system_to_dict(res.wts, goal=prop.final, start=res.initial_abstract_state)
    text = json.dumps(doc, indent=1) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    log.info("%d states, %d transitions", res.wts.n_states, res.wts.n_transitions)
    return EXIT_OK


def cmd_solve(args):
    wts, goal, start = ser.finite_system_from_dict(ser.load_json(args.system), args.system)
    if args.start is not None:
        start = wts.state_names.index(args.start)
    if goal is None or start is None:
        raise ser.ProblemParseError(f"{args.system}: 'goal' and 'start' are required")
    others = sorted({lab for lab in wts.labels if lab != goal})
    prop = PropertyAutomaton.reachability(goal, others)
    game = reduce_reach(wts, prop)
    q = game.initial_for(start, prop)[0]
    cost, strategy = solve_finite_game(game, q)
    result = {"cost": ser._num(cost), "winning": strategy is not None}
    if strategy is not None:
        choice = {}
        for s in range(wts.n_states):
            for qq in game.initial_for(s, prop):
                u = strategy.input_at(strategy.horizon, qq)
                if u is not None:
                    choice[wts.state_names[s]] = wts.input_names[u]
        result["choice"] = choice
    print(f"cost: {cost:g}")
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=2) + "\n")
    return EXIT_OK if strategy is not None else EXIT_NO_WIN


def cmd_simulate(args):
    system, _, params = ser.parse_problem(args.problem)
    x0 = params.x0 if args.x0 is None else [float(v) for v in args.x0.split(",")]
    inputs = ser.parse_inputs(args.inputs, system.p)
    tr = simulate(system, x0, inputs)
    text = ser.trajectory_to_csv(tr)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_check(args):
    system, prop, params = ser.parse_problem(args.problem)
    rng = np.random.default_rng(args.seed)
    eps = _epsilon_arg(args.epsilon, params)
    kw = _abstract_kwargs(params)
    coarse = cons_abs(system, eps, params.x0, jobs=args.jobs, **kw)
    fine_kw = _abstract_kwargs(params, 1)
    fine = cons_abs(system, [e / 2 for e in eps], params.x0, jobs=args.jobs, **fine_kw)
    failures = []

    witness = canonical_refinement_witness(fine, coarse)
    res = check_simulation(fine.wts, coarse.wts, witness)
    print(f"refinement simulation: {'ok' if res else 'FAILED ' + str(res.violation)}")
    if not res:
        failures.append("simulation")

    X, U = system.state_space, system.input_space
    uncovered = 0
    for _ in range(args.samples):
        x = rng.uniform(X.lower, X.upper)
        u = rng.uniform(U.lower, U.upper)
        hit = concrete_step_covered(coarse, system, x, u)
        if hit is None or (np.isfinite(hit[1]) and hit[2] > hit[1] + 1e-9):
            uncovered += 1
    print(f"soundness sampling: {args.samples - uncovered}/{args.samples} steps covered")
    if uncovered:
        failures.append("soundness")
    return EXIT_OK if not failures else EXIT_ERROR


COMMANDS = {
    "synthesize": cmd_synthesize,
    "abstract": cmd_abstract,
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "check": cmd_check,
}


def run_cli(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ser.ProblemParseError, ser.ProblemValidationError, AbstractionError,
            ExtractionError, LeftDomainError, SoundnessError, OSError, ValueError) as exc:
        print(f"abscontrol {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
