"""Command-line entry point.

Subcommands: sweep, ablate, mp-check, lipschitz-check, spectrum. Configs
are JSON files; any field can be overridden on the command line by its
dotted name, e.g. `--dataset.seed 3` or `--ablation.cutoff=1e-3`.

Exit codes: 0 success, 1 configuration error, 2 numerical guard failure.
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import data, exp, qstate, rmt
from .exp import ConfigError, RankGuardError
from .regress import build_data_matrix


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); config errors are exit 1
        raise ConfigError(message)


def _apply_overrides(doc: dict, extras: list[str]) -> dict:
    """Apply `--a.b.c value` (or `--a.b.c=value`) overrides onto a config dict."""
    i = 0
    while i < len(extras):
        token = extras[i]
        if not token.startswith("--"):
            raise ConfigError(f"unknown argument {token!r}")
        key = token[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extras):
                raise ConfigError(f"override {token!r} is missing a value")
            raw = extras[i + 1]
            i += 2
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = key.split(".")
        for part in parts[:-1]:
            nxt = node.get(part)
            if not isinstance(nxt, dict):
                nxt = {}
                node[part] = nxt
            node = nxt
        node[parts[-1]] = value
    return doc


def _load_config(path: str, extras: list[str]) -> exp.SweepConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    _apply_overrides(doc, extras)
    return exp.config_from_dict(doc)


def _write_json(payload: dict, path: Path | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text, encoding="utf-8")


def _cmd_sweep(args, extras) -> int:
    cfg = _load_config(args.config, extras)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    spectra: dict | None = {} if args.spectra else None
    start = time.perf_counter()
    points = exp.run_sweep(cfg, spectra)
    runtime = time.perf_counter() - start
    exp.write_curve_csv(points, out_dir / "curve.csv")
    if spectra:
        for n, sigmas in sorted(spectra.items()):
            with open(out_dir / f"spectrum_N{n}.csv", "w", encoding="utf-8", newline="\n") as fh:
                fh.write("index,eigenvalue\n")
                for idx, s in enumerate(np.asarray(sigmas) ** 2):
                    fh.write(f"{idx},{repr(float(s))}\n")
    summary = {
        "config": exp.config_to_dict(cfg),
        **exp.peak_summary(points),
        "runtime_seconds": runtime,
    }
    _write_json(summary, out_dir / "summary.json")
    print(f"wrote {out_dir / 'curve.csv'} ({len(points)} grid points)")
    return 0


def _cmd_ablate(args, extras) -> int:
    cfg = _load_config(args.config, extras)
    if cfg.ablation is None:
        raise ConfigError("ablate requires an 'ablation' block in the config")
    return _cmd_sweep(args, extras)


def _cmd_mp_check(args, _extras) -> int:
    report = rmt.gaussian_baseline_l1(args.p, args.n, args.seed, args.trials)
    _write_json(report, Path(args.out) if args.out else None)
    return 0


def _cmd_lipschitz_check(args, _extras) -> int:
    try:
        spec = qstate.load_spec(args.spec)
    except (OSError, json.JSONDecodeError, ValueError, KeyError) as err:
        raise ConfigError(f"cannot load feature map {args.spec}: {err}") from err
    report = qstate.verify_lipschitz(spec, args.pairs, args.seed)
    _write_json(report.json_dict(), Path(args.out) if args.out else None)
    return 0


def _cmd_spectrum(args, extras) -> int:
    cfg = _load_config(args.config, extras)
    source = exp.make_source(cfg.dataset)
    xs, ys, _ = source.draw(args.N, exp.child_seed(cfg.seed, "spectrum", args.N))
    if source.pca_dim is not None:
        ds = data.Dataset(xs, ys, source.task, {})
        xs = data.apply_pca(data.fit_pca(ds, source.pca_dim), ds).inputs
    states = []
    for x in xs:
        rho = qstate.encode(cfg.feature_map, x)
        states.append(rho if cfg.kind == "eqk" else qstate.reduce(rho))
    dm = build_data_matrix(states, ys, cfg.kind)
    spectrum = rmt.empirical_spectrum(dm, normalize=args.normalize)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rmt.write_spectrum_csv(spectrum, out_dir / f"spectrum_N{args.N}.csv")
    print(f"wrote {out_dir / f'spectrum_N{args.N}.csv'}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="qkdd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sweep = sub.add_parser("sweep", help="run a seeded N-sweep")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--spectra", action="store_true", help="also dump per-N spectra")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_abl = sub.add_parser("ablate", help="run a sweep with one factor ablated")
    p_abl.add_argument("--config", required=True)
    p_abl.add_argument("--out", required=True)
    p_abl.add_argument("--spectra", action="store_true")
    p_abl.set_defaults(func=_cmd_ablate)

    p_mp = sub.add_parser("mp-check", help="Gaussian-baseline spectral-law check")
    p_mp.add_argument("--p", type=int, required=True)
    p_mp.add_argument("--n", type=int, required=True)
    p_mp.add_argument("--seed", type=int, default=0)
    p_mp.add_argument("--trials", type=int, default=20)
    p_mp.add_argument("--out", default=None)
    p_mp.set_defaults(func=_cmd_mp_check)

    p_lip = sub.add_parser("lipschitz-check", help="continuity-bound sampling check")
    p_lip.add_argument("--spec", required=True, help="feature-map JSON file")
    p_lip.add_argument("--pairs", type=int, default=1000)
    p_lip.add_argument("--seed", type=int, default=0)
    p_lip.add_argument("--out", default=None)
    p_lip.set_defaults(func=_cmd_lipschitz_check)

    p_spec = sub.add_parser("spectrum", help="empirical spectrum at one grid point")
    p_spec.add_argument("--config", required=True)
    p_spec.add_argument("--N", type=int, required=True)
    p_spec.add_argument("--out", required=True)
    p_spec.add_argument("--normalize", action="store_true")
    p_spec.set_defaults(func=_cmd_spectrum)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, extras = parser.parse_known_args(argv)
        return args.func(args, extras)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (data.DataError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except RankGuardError as err:
        print(f"numerical guard failure: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
