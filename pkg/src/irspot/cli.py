"""Command-line front door.

Subcommands: attack | dodge | calibrate | study | radiometry | serve.
Exit codes: 0 success, 1 usage error, 2 oracle error, 3 no adversarial
example found (best distance did not cross the threshold).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .attack import AttackConfig, run_attack, run_dodge
from .calibration import calibrate_once
from .dodging import check_dodge_landmark, flood_illuminate, make_landmark_oracle
from .image import load_image, save_image
from .oracle import DEFAULT_THRESHOLD, OracleError, distance, make_embedding_oracle
from .spots import PerturbationConfig
from .study import DEFAULT_BINS, StudyConfig, run_study, radiated_power, write_csv_summary
from .validation import ValidationError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ORACLE = 2
EXIT_NO_EXAMPLE = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; the CLI contract wants 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_oracle_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--oracle", default="reference",
                   help="'reference', an http(s) URL, or 'cmd:<command>'")
    p.add_argument("--oracle-timeout", type=float, default=10.0)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--input-size", type=int, default=160)


def _add_attack_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spots", type=int, default=5, help="number of light spots")
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--refine", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grad-mode", choices=("whitebox", "blackbox"), default="whitebox")
    p.add_argument("--lr-pos", type=float, default=0.05)
    p.add_argument("--lr-sigma", type=float, default=0.01)
    p.add_argument("--lr-s", type=float, default=0.01)
    p.add_argument("--lr-amp", type=float, default=0.01)


def _attack_config(args) -> AttackConfig:
    return AttackConfig(
        n_spots=args.spots, max_iters=args.iters, refine_iters=args.refine,
        seed=args.seed, grad_mode=args.grad_mode, threshold=args.threshold,
        lr_pos=args.lr_pos, lr_sigma=args.lr_sigma, lr_s=args.lr_s,
        lr_amp=args.lr_amp)


def _oracle(args):
    return make_embedding_oracle(args.oracle, input_size=args.input_size,
                                 timeout=args.oracle_timeout,
                                 threshold=args.threshold)


def _emit(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _cmd_attack(args) -> int:
    oracle = _oracle(args)
    base = load_image(args.attacker)
    victim = load_image(args.victim)
    result = run_attack(base, victim, _attack_config(args), oracle)
    if args.save_config:
        Path(args.save_config).write_text(result.best_config.to_json() + "\n")
    if args.save_adv:
        from .spots import synthesize

        save_image(synthesize(base, result.best_config), args.save_adv)
    _emit(result.to_dict(), args.out)
    return EXIT_OK if result.success else EXIT_NO_EXAMPLE


def _cmd_dodge(args) -> int:
    oracle = _oracle(args)
    base = load_image(args.attacker)
    if args.flood is not None:
        landmark = make_landmark_oracle(args.landmark_oracle,
                                        input_size=args.input_size,
                                        timeout=args.oracle_timeout)
        lit = flood_illuminate(base, args.flood)
        dodged = check_dodge_landmark(lit, landmark)
        _emit({"mode": "flood", "strength": args.flood, "landmark_dodged": dodged},
              args.out)
        return EXIT_OK if dodged else EXIT_NO_EXAMPLE
    result = run_dodge(base, _attack_config(args), oracle)
    _emit(result.to_dict(), args.out)
    return EXIT_OK if result.success else EXIT_NO_EXAMPLE


def _cmd_calibrate(args) -> int:
    oracle = _oracle(args)
    on = load_image(args.on)
    off = load_image(args.off)
    target = PerturbationConfig.from_json(Path(args.target).read_text())
    victim_emb = oracle.embed(load_image(args.victim)) if args.victim else None
    report = calibrate_once(on, off, target, victim_emb, oracle,
                            search_radius=args.search_radius)
    _emit(report.to_dict(), args.out)
    return EXIT_OK


def _parse_bins(text: str):
    bins = []
    for part in text.split(","):
        lo, hi = part.split(":")
        bins.append((float(lo), float(hi)))
    return tuple(bins)


def _cmd_study(args) -> int:
    oracle = _oracle(args)
    cfg = StudyConfig(
        attackers=tuple(args.attackers), victim_dir=args.victims,
        bins=_parse_bins(args.bins) if args.bins else DEFAULT_BINS,
        attack=_attack_config(args), out_path=args.out,
        checkpoint_path=args.checkpoint, jobs=args.jobs)
    report = run_study(cfg, oracle, progress=_progress if args.verbose else None)
    if args.csv:
        write_csv_summary(report, args.csv)
    if not args.out:
        print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def _progress(record: dict) -> None:
    print(f"[{record['attacker']} -> {record['victim']}] "
          f"{record['original_distance']:.4f} -> {record['final_distance']:.4f} "
          f"({'hit' if record['success'] else 'miss'})", file=sys.stderr)


def _cmd_radiometry(args) -> int:
    print(radiated_power(args.pled, args.eta, args.r))
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(oracle=_oracle(args), state_dir=args.state_dir,
                     idle_ttl=args.idle_ttl, jobs=args.jobs)
    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="irspot", description=__doc__)
    parser.add_argument("--version", action="version", version=f"irspot {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attack", parents=[], help="search an impersonation layout")
    p.add_argument("--attacker", required=True)
    p.add_argument("--victim", required=True)
    p.add_argument("--out", help="write the result JSON here instead of stdout")
    p.add_argument("--save-adv", help="write the synthesized adversarial image (PNG/PPM)")
    p.add_argument("--save-config", help="write the best perturbation config JSON")
    _add_oracle_flags(p)
    _add_attack_flags(p)
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("dodge", help="search a dodging layout or check flood dodging")
    p.add_argument("--attacker", required=True)
    p.add_argument("--flood", type=float,
                   help="skip optimization; flood-illuminate at this strength and "
                        "query the landmark oracle")
    p.add_argument("--landmark-oracle", default="reference")
    p.add_argument("--out")
    _add_oracle_flags(p)
    _add_attack_flags(p)
    p.set_defaults(func=_cmd_dodge)

    p = sub.add_parser("calibrate", help="analyze on/off photos against a target layout")
    p.add_argument("--on", required=True)
    p.add_argument("--off", required=True)
    p.add_argument("--target", required=True, help="perturbation config JSON file")
    p.add_argument("--victim", help="victim image for the live loss")
    p.add_argument("--search-radius", type=int, default=20)
    p.add_argument("--out")
    _add_oracle_flags(p)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("study", help="binned large-scale impersonation study")
    p.add_argument("--attackers", nargs="+", required=True)
    p.add_argument("--victims", required=True, help="directory of victim images")
    p.add_argument("--bins", help="comma-separated lo:hi pairs, e.g. 1.242:1.4,1.4:1.55")
    p.add_argument("--out")
    p.add_argument("--csv")
    p.add_argument("--checkpoint", help="JSON-lines checkpoint for resumable runs")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--verbose", action="store_true")
    _add_oracle_flags(p)
    _add_attack_flags(p)
    p.set_defaults(func=_cmd_study)

    p = sub.add_parser("radiometry", help="peak LED irradiance on the face (W/m^2)")
    p.add_argument("--pled", type=float, required=True, help="LED power in watts")
    p.add_argument("--eta", type=float, required=True, help="LED efficiency in (0, 1]")
    p.add_argument("--r", type=float, required=True, help="spot radius in meters")
    p.set_defaults(func=_cmd_radiometry)

    p = sub.add_parser("serve", help="run the interactive session service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.add_argument("--state-dir", help="persist session snapshots here")
    p.add_argument("--idle-ttl", type=float, default=3600.0)
    p.add_argument("--jobs", type=int, default=1)
    _add_oracle_flags(p)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except OracleError as exc:
        print(f"oracle error: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except (ValidationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
