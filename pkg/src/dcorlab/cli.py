"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical degeneracy
(or a failed numerical self-check).
"""

import argparse
import csv
import json
import sys

from .config import load_config, package_version, provenance
from .core import dcor, fig1_sampler, make_rng, pearson
from .exceptions import DcorError, DegenerateError, InvalidInputError
from .experiments import (
    init_pair,
    layer_similarity_heatmap,
    make_blobs_task,
    stochastic_pdc_estimate,
    train_independent_pair,
    transfer_attack_eval,
)
from .grad import dcor_value_grad, finite_diff_check, pdcor_value_grad
from .nn import forward
from .pdc import pdcor
from .storage import export_heatmap, load_params, read_dump, save_params

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DEGENERATE = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageError(message)


def _emit(value, report, as_json):
    if as_json:
        print(json.dumps(report, sort_keys=True))
    else:
        print(f"{value:.6f}")


def _pick_layer(dump, name, flag):
    if name is not None:
        return dump.layer(name)
    if len(dump.layer_names) == 1:
        return dump.layer(dump.layer_names[0])
    raise InvalidInputError(f"{flag} is required; dump {dump.model_name!r} has layers {dump.layer_names}")


def _aligned_rows(n, *pairs):
    """Slice the first ``n`` rows of each (dump, matrix) and check sample ids agree."""
    counts = [d.n for d, _ in pairs]
    n = min(counts) if n is None else n
    if n > min(counts):
        raise InvalidInputError(f"requested {n} samples but a dump holds only {min(counts)}")
    ids = [list(d.sample_ids[:n]) for d, _ in pairs]
    if any(i != ids[0] for i in ids[1:]):
        raise InvalidInputError("dumps disagree on sample ids")
    return n, [m[:n] for _, m in pairs]


def _dump_seed(*dumps):
    seeds = {d.extra.get("seed") for d in dumps}
    return seeds.pop() if len(seeds) == 1 else None


def cmd_dcor(args):
    da, db = read_dump(args.dump_a), read_dump(args.dump_b)
    n, (x, y) = _aligned_rows(args.n, (da, _pick_layer(da, args.layer_a, "--layer-a")),
                              (db, _pick_layer(db, args.layer_b, "--layer-b")))
    rep = dcor(x, y)
    report = {"dcor": rep.dcor, "dcov2": rep.dcov2, "dvar2_x": rep.dvar2_x,
              "dvar2_y": rep.dvar2_y, "degenerate": rep.degenerate,
              "provenance": provenance(_dump_seed(da, db), n)}
    _emit(rep.dcor, report, args.json)
    if rep.degenerate:
        print("error: a distance variance is zero (degenerate input)", file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


def cmd_pdcor(args):
    dx, dy, dg = read_dump(args.dump_x), read_dump(args.dump_y), read_dump(args.dump_gt)
    n, (x, y, gt) = _aligned_rows(args.n, (dx, _pick_layer(dx, args.layer_x, "--layer-x")),
                                  (dy, _pick_layer(dy, args.layer_y, "--layer-y")),
                                  (dg, _pick_layer(dg, args.layer_gt, "--layer-gt")))
    seed = _dump_seed(dx, dy, dg)
    if args.m is not None:
        rows = n - n % args.m
        value = stochastic_pdc_estimate(x[:rows], y[:rows], gt[:rows], args.m)
        report = {"pdcor2": value, "estimator": "minibatch_mean",
                  "provenance": provenance(seed, rows, args.m)}
        _emit(value, report, args.json)
        return EXIT_OK
    rep = pdcor(x, gt, y)
    report = {"pdcor2": rep.pdcor2, "pdcov": rep.pdcov, "degenerate": rep.degenerate,
              "estimator": "full_batch", "provenance": provenance(seed, n)}
    _emit(rep.pdcor2, report, args.json)
    if rep.degenerate:
        print("error: a projected U-centered matrix has zero norm", file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


def cmd_heatmap(args):
    if args.parallel < 1:
        raise InvalidInputError("--parallel must be at least 1")
    da = read_dump(args.dump_a)
    db = read_dump(args.dump_b) if args.dump_b else None
    hm = layer_similarity_heatmap(da, db, n_samples=args.n, parallel=args.parallel)
    seed = _dump_seed(da, db) if db is not None else _dump_seed(da)
    paths = export_heatmap(hm, args.output, provenance(seed, hm.n_samples))
    for p in paths:
        print(p)
    return EXIT_OK


def _train(cfg, data, alpha=None):
    pc = cfg.pair_config() if alpha is None else cfg.pair_config(alpha=alpha)
    f1, f2 = init_pair(data, pc)
    return pc, train_independent_pair(f1, f2, data, pc)


def cmd_train_pair(args):
    cfg = load_config(args.config)
    data = make_blobs_task(**cfg.data_kwargs())
    pc, res = _train(cfg, data)
    prov = provenance(cfg.seed, len(data.x_train), pc.batch_size)
    save_params(cfg.out_path("f1.npz"), res.f1, **prov)
    save_params(cfg.out_path("f2.npz"), res.f2, alpha=pc.alpha, **prov)
    doc = {**res.metrics, "provenance": prov}
    cfg.out_path("metrics.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    print(f"feature_dcor={res.metrics['feature_dcor']:.6f} "
          f"clean_acc_f1={res.metrics['clean_acc_f1']:.4f} "
          f"clean_acc_f2={res.metrics['clean_acc_f2']:.4f}")
    return EXIT_OK


def cmd_attack_eval(args):
    cfg = load_config(args.config)
    attacks = cfg.attack_configs()
    data = make_blobs_task(**cfg.data_kwargs())
    rows, m = [], None
    if cfg.models:
        try:
            f1, f2 = load_params(cfg.models["f1"]), load_params(cfg.models["f2"])
        except KeyError as exc:
            raise InvalidInputError("'models' needs both 'f1' and 'f2' paths") from exc
        except (OSError, ValueError) as exc:
            raise InvalidInputError(f"cannot load model: {exc}") from exc
        _, g1 = forward(f1, data.x_test)
        _, g2 = forward(f2, data.x_test)
        rows.append(("loaded", None, dcor(g1, g2).dcor, f1, f2))
    else:
        pc = cfg.pair_config()
        for name, alpha in (("baseline", 0.0), ("dc", pc.alpha)):
            _, res = _train(cfg, data, alpha)
            rows.append((name, alpha, res.metrics["feature_dcor"], res.f1, res.f2))
        m = pc.batch_size
    prov = provenance(cfg.seed, len(data.x_test), m)
    labels = ["clean"] + [a.label for a in attacks]
    out = cfg.out_path("attack_eval.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "alpha", "feature_dcor", *labels, *prov])
        for name, alpha, fdc, f1, f2 in rows:
            table = transfer_attack_eval(f1, f2, data.x_test, data.y_test, attacks)
            w.writerow([name, "" if alpha is None else f"{alpha:g}", f"{fdc:.6f}",
                        *(f"{table[k]:.4f}" for k in labels),
                        *("" if v is None else v for v in prov.values())])
    print(out)
    return EXIT_OK


def cmd_grad_check(args):
    rng = make_rng(args.seed)
    worst = 0.0
    for _ in range(args.configs):
        x = rng.standard_normal((args.n, 3))
        y = x @ rng.standard_normal((3, 2)) + 0.5 * rng.standard_normal((args.n, 2))
        if args.loss == "dcor":
            err = finite_diff_check(lambda v: dcor_value_grad(v, y), x, h=args.h)
        else:
            z = rng.standard_normal((args.n, 2))
            err = finite_diff_check(lambda v: pdcor_value_grad(v, y, z), x, h=args.h)
        worst = max(worst, err)
    ok = worst < args.tol
    print(f"{args.loss}: max relative discrepancy {worst:.3e} over {args.configs} configs "
          f"({'PASS' if ok else 'FAIL'})")
    return EXIT_OK if ok else EXIT_DEGENERATE


def cmd_fig1(args):
    x, y = fig1_sampler(args.case, args.n, args.seed)
    r = pearson(x, y)
    d = dcor(x, y).dcor
    if args.json:
        print(json.dumps({"case": args.case, "pearson": r, "dcor": d,
                          "provenance": provenance(args.seed, args.n)}, sort_keys=True))
    else:
        print(f"pearson {r:.6f}")
        print(f"dcor {d:.6f}")
    return EXIT_OK


def cmd_selftest(args):
    from .selftest import run_selftest

    results = run_selftest()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_DEGENERATE


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be positive: {v}")
    return v


def build_parser():
    p = _Parser(prog="dcorlab", description="Distance correlation tools.")
    p.add_argument("--version", action="version", version=f"%(prog)s {package_version()}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("dcor", help="distance correlation between two dumped layers")
    s.add_argument("dump_a")
    s.add_argument("dump_b")
    s.add_argument("--layer-a")
    s.add_argument("--layer-b")
    s.add_argument("-n", type=_positive_int, help="use the first N samples")
    s.add_argument("--json", action="store_true", help="print a full JSON report")
    s.set_defaults(func=cmd_dcor)

    s = sub.add_parser("pdcor", help="partial distance correlation of X and GT given Y")
    s.add_argument("dump_x")
    s.add_argument("dump_y")
    s.add_argument("dump_gt")
    s.add_argument("--layer-x")
    s.add_argument("--layer-y")
    s.add_argument("--layer-gt")
    s.add_argument("-n", type=_positive_int)
    s.add_argument("-m", type=_positive_int, help="average over minibatches of M samples")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_pdcor)

    s = sub.add_parser("heatmap", help="layer-by-layer similarity matrix")
    s.add_argument("dump_a")
    s.add_argument("dump_b", nargs="?")
    s.add_argument("-o", "--output", required=True, help="output prefix (.csv and .json added)")
    s.add_argument("-n", type=_positive_int, default=256)
    s.add_argument("--parallel", type=_positive_int, default=1)
    s.set_defaults(func=cmd_heatmap)

    s = sub.add_parser("train-pair", help="train a model pair with the dcor penalty")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_train_pair)

    s = sub.add_parser("attack-eval", help="transfer-attack accuracy table")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_attack_eval)

    s = sub.add_parser("grad-check", help="compare analytic gradients with finite differences")
    s.add_argument("--loss", choices=("dcor", "pdcor"), default="dcor")
    s.add_argument("--configs", type=_positive_int, default=50)
    s.add_argument("-n", type=_positive_int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--h", type=float, default=1e-5)
    s.add_argument("--tol", type=float, default=1e-6)
    s.set_defaults(func=cmd_grad_check)

    s = sub.add_parser("fig1", help="Pearson vs dcor on a toy distribution")
    s.add_argument("--case", choices=("a", "b", "c", "d"), required=True)
    s.add_argument("-n", type=_positive_int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_fig1)

    s = sub.add_parser("selftest", help="run the built-in oracle and property checks")
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except DegenerateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except DcorError as exc:
        code = getattr(exc, "code", None)
        prefix = f"error [{code}]" if code else "error"
        print(f"{prefix}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, OverflowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
