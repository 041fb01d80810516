"""Command-line entry point: ``boundsynth {bound,certify,selftest}``."""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import interval, jsonio, presets
from .certify import QueryFormatError, adversarial_search, certify_batch, load_queries, summary_line
from .expr import ActivationDef, ExprError, vectorized
from .jsonio import fmt_float
from .minimize import MinimizeConfig
from .propagate import Network, NetworkFormatError, resolve_threads
from .selftest import SuiteConfig, run as run_selftest
from .soundify import RelaxationDomainError, SoundifyConfig, synthesize_relaxation
from .synth import SynthConfig
from .verify import VerifyConfig

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DOMAIN = 0, 1, 2, 3
DEFAULT_SEED = 20220


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class CliConfig:
    delta: float = 1e-7
    epsilon: float | None = None
    samples_per_dim: int | None = None
    threads: int = 6
    timeout_per_query: float = 5.0
    seed: int = DEFAULT_SEED
    output: str | None = None

    def soundify(self) -> SoundifyConfig:
        try:
            return SoundifyConfig(
                synth=SynthConfig(samples_per_dim=self.samples_per_dim),
                minimize=MinimizeConfig(),
                verify=VerifyConfig(delta=self.delta, epsilon=self.epsilon, timeout=self.timeout_per_query),
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from None


def parse_box(text: str) -> list[tuple[float, float]]:
    """``"lo,hi;lo,hi"`` into interval pairs."""
    dims = []
    for k, part in enumerate(p for p in text.split(";") if p.strip()):
        pieces = part.split(",")
        if len(pieces) != 2:
            raise UsageError(f"--box dimension {k + 1}: expected 'lo,hi', got {part.strip()!r}")
        try:
            lo, hi = (float(p) for p in pieces)
        except ValueError:
            raise UsageError(f"--box dimension {k + 1}: non-numeric bound in {part.strip()!r}") from None
        if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
            raise UsageError(f"--box dimension {k + 1}: need finite lo <= hi, got {part.strip()!r}")
        dims.append((lo, hi))
    if not dims:
        raise UsageError("--box: no dimensions given")
    return dims


def parse_dims(text: str | None) -> tuple[int, ...] | None:
    """``"0..3"`` or ``"0,2,5"`` (or a mix) into a tuple of indices."""
    if text is None:
        return None
    out: list[int] = []
    try:
        for part in text.split(","):
            part = part.strip()
            if ".." in part:
                a, b = (int(v) for v in part.split(".."))
                if b < a:
                    raise UsageError(f"--perturb-dims: empty range {part!r}")
                out.extend(range(a, b + 1))
            elif part:
                out.append(int(part))
    except ValueError:
        raise UsageError(f"--perturb-dims: cannot parse {text!r}") from None
    if any(i < 0 for i in out):
        raise UsageError("--perturb-dims: indices must be non-negative")
    return tuple(out)


def _activation(args) -> ActivationDef:
    if args.preset:
        try:
            return presets.get(args.preset)
        except KeyError as exc:
            raise UsageError(exc.args[0]) from None
    try:
        return ActivationDef.from_text(args.expr)
    except ExprError as exc:
        raise UsageError(f"--expr: {exc}") from None


def _plot_grid(box: list[tuple[float, float]]) -> np.ndarray:
    if len(box) == 1:
        return np.linspace(box[0][0], box[0][1], 512)[:, None]
    if len(box) == 2:
        gx = np.linspace(box[0][0], box[0][1], 64)
        gy = np.linspace(box[1][0], box[1][1], 64)
        return np.array([(x, y) for x in gx for y in gy])
    raise UsageError("--plot supports 1-D and 2-D boxes only")


def write_plot(path: str, act: ActivationDef, relax) -> None:
    box = relax.box.as_tuples()
    X = _plot_grid(box)
    s = vectorized(act.body)(X.T)
    lo, up = relax.lower.evaluate(X), relax.upper.evaluate(X)
    head = ["x", "y"][: len(box)] + ["sigma", "lower", "upper"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(head) + "\n")
        for row in np.column_stack([X, s, lo, up]):
            fh.write(",".join(fmt_float(v) for v in row) + "\n")


def cmd_bound(args) -> int:
    cfg = CliConfig(delta=args.delta, epsilon=args.partition, samples_per_dim=args.samples, timeout_per_query=args.timeout)
    act = _activation(args)
    box = parse_box(args.box)
    if act.arity > len(box):
        raise UsageError(f"--box has {len(box)} dimensions, expression uses x{act.arity}")
    if args.plot and len(box) > 2:
        raise UsageError("--plot supports 1-D and 2-D boxes only")
    relax = synthesize_relaxation(act, box, cfg.soundify())
    print(jsonio.dumps(relax.to_dict(timing=not args.no_timing)))
    if args.plot:
        write_plot(args.plot, act, relax)
    return EXIT_OK


def _load_json(path: str, what: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"{what}: cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what}: invalid JSON in {path}: {exc}") from None


def cmd_certify(args) -> int:
    threads = resolve_threads(args.threads)
    cfg = CliConfig(delta=args.delta, samples_per_dim=args.samples, threads=threads, timeout_per_query=args.timeout)
    if not args.epsilon >= 0:
        raise UsageError("--epsilon must be non-negative")
    try:
        net = Network.from_dict(_load_json(args.network, "--network"))
    except (NetworkFormatError, ValueError) as exc:
        raise UsageError(f"--network {args.network}: {exc}") from None
    try:
        queries = load_queries(_load_json(args.inputs, "--inputs"), args.epsilon, parse_dims(args.perturb_dims))
    except QueryFormatError as exc:
        raise UsageError(f"--inputs {args.inputs}: {exc}") from None
    except ValueError as exc:
        raise UsageError(f"--perturb-dims: {exc}") from None
    for i, q in enumerate(queries):
        if len(q.input) != net.input_dim:
            raise UsageError(f"--inputs {args.inputs}: inputs[{i}].input has length {len(q.input)}, network expects {net.input_dim}")
        if q.true_label >= net.output_dim:
            raise UsageError(f"--inputs {args.inputs}: inputs[{i}].label {q.true_label} exceeds {net.output_dim - 1}")
    certs = certify_batch(net, queries, cfg.soundify(), threads=threads)
    out = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    try:
        for i, c in enumerate(certs):
            rec = {"index": i}
            rec.update(c.to_dict(timing=not args.no_timing))
            if args.attack:
                rng = np.random.default_rng([args.seed, i])
                rec["counterexample"] = adversarial_search(net, queries[i], rng) is not None
            out.write(jsonio.dumps(rec) + "\n")
        out.write(summary_line(certs) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_selftest(args) -> int:
    base = SuiteConfig.quick(args.seed) if args.quick else SuiteConfig(seed=args.seed)
    previous = None
    if args.fault == "no-widening":
        previous = interval.set_widening(False)
    t0 = time.perf_counter()
    try:
        results, artifact = run_selftest(base)
    finally:
        if previous is not None:
            interval.set_widening(previous)
    wall = time.perf_counter() - t0
    width = max(len(r.name) for r in results)
    for r in results:
        detail = jsonio.dumps(r.detail)
        print(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {detail[:160]}")
    ok = all(r.passed for r in results)
    print(f"{'overall':<{width}}  {'PASS' if ok else 'FAIL'}  wall {wall:.1f} s")
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(jsonio.dumps(artifact) + "\n")
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="boundsynth", description="Sound linear bounds for arbitrary activation functions.")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bound", help="synthesize a sound linear relaxation over a box")
    src = b.add_mutually_exclusive_group(required=True)
    src.add_argument("--expr", help='activation over x1, x2, ... e.g. "x1*sigmoid(x1)"')
    src.add_argument("--preset", help=f"named activation ({', '.join(presets.PRESETS)})")
    b.add_argument("--box", required=True, help='"lo,hi[;lo,hi...]"')
    b.add_argument("--delta", type=float, default=1e-7, help="verifier slack (default 1e-7)")
    b.add_argument("--partition", type=float, default=None, help="verifier partition width (default 1000*delta)")
    b.add_argument("--samples", type=int, default=None, help="LP sample points per dimension")
    b.add_argument("--timeout", type=float, default=5.0, help="seconds per verification call")
    b.add_argument("--plot", metavar="CSV", help="write sigma/lower/upper on a grid")
    b.add_argument("--no-timing", action="store_true", help="omit wall times from the output")
    b.set_defaults(func=cmd_bound)

    c = sub.add_parser("certify", help="certify l-inf robustness of a network on a batch of inputs")
    c.add_argument("--network", required=True, help="network JSON")
    c.add_argument("--inputs", required=True, help='JSON list of {"input": [...], "label": k}')
    c.add_argument("--epsilon", type=float, required=True, help="perturbation radius")
    c.add_argument("--perturb-dims", default=None, help='perturbed input indices, e.g. "0..3" or "0,2"')
    c.add_argument("--threads", type=int, default=None, help="worker threads (default $BOUNDSYNTH_THREADS or 6)")
    c.add_argument("--delta", type=float, default=1e-7)
    c.add_argument("--samples", type=int, default=None)
    c.add_argument("--timeout", type=float, default=5.0, help="seconds per verification call")
    c.add_argument("--attack", action="store_true", help="also run the adversarial search per input")
    c.add_argument("--seed", type=int, default=DEFAULT_SEED)
    c.add_argument("--output", help="write reports here instead of stdout")
    c.add_argument("--no-timing", action="store_true")
    c.set_defaults(func=cmd_certify)

    s = sub.add_parser("selftest", help="run the built-in soundness / volume / LP checks")
    s.add_argument("--quick", action="store_true", help="reduced sample counts")
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.add_argument("--output", help="write the JSON artifact here")
    s.add_argument("--fault", choices=["no-widening"], default=None, help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_selftest)
    return p


_VALUE_OPTIONS = ("--box", "--expr")


def _join_dash_values(argv: list[str]) -> list[str]:
    """Let ``--box -1,1`` through: argparse would read ``-1,1`` as an option."""
    out: list[str] = []
    it = iter(argv)
    for tok in it:
        if tok in _VALUE_OPTIONS:
            nxt = next(it, None)
            if nxt is None:
                out.append(tok)
            elif nxt.startswith("-") and not nxt.startswith("--"):
                out.append(f"{tok}={nxt}")
            else:
                out += [tok, nxt]
        else:
            out.append(tok)
    return out


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = _join_dash_values(list(sys.argv[1:] if argv is None else argv))
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"boundsynth {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RelaxationDomainError as exc:
        print(f"boundsynth {args.command}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
