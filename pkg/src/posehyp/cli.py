"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 infeasible conditioning context.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields

import numpy as np

from . import formats
from .config import ConfigError, RunConfig, load_config
from .hypotheses import InfeasibleContextError

log = logging.getLogger("posehyp")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INFEASIBLE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config_flags(p):
    g = p.add_argument_group("run configuration (flags override --config, which overrides defaults)")
    g.add_argument("--config", help="JSON file with RunConfig fields")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name in ("model_path", "dict_path"):
            continue
        if f.type == "bool":
            g.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        elif f.type == "int":
            g.add_argument(flag, dest=f.name, type=int, default=None)
        elif f.type == "float":
            g.add_argument(flag, dest=f.name, type=float, default=None)
        else:
            g.add_argument(flag, dest=f.name, default=None)
    g.add_argument("--model", dest="model_path", help="anatomy model file (env POSEHYP_MODEL)")
    g.add_argument("--dict", dest="dict_path", help="pose dictionary file (env POSEHYP_DICT)")


def _config(args) -> RunConfig:
    names = {f.name for f in fields(RunConfig)}
    over = {k: v for k, v in vars(args).items() if k in names and v is not None}
    return load_config(args.config, **over)


def _model(cfg):
    from .synthetic import default_model

    return formats.load_model(cfg.model_path) if cfg.model_path else default_model()


def _dictionary(cfg):
    from .synthetic import default_dictionary

    return formats.load_dictionary(cfg.dict_path) if cfg.dict_path else default_dictionary()


def _corpus(args):
    if args.synthetic is not None:
        from .synthetic import synthetic_corpus

        return synthetic_corpus(args.synthetic, np.random.default_rng(args.corpus_seed)), None
    if args.corpus is None:
        raise UsageError("give --corpus FILE or --synthetic N")
    frames = formats.read_frames(args.corpus)
    if any(fr.gt3d is None for fr in frames):
        raise ValueError(f"{args.corpus}: every frame needs gt3d")
    return np.array([fr.gt3d for fr in frames]), [fr.action or "all" for fr in frames]


# --------------------------------------------------------------------------
# commands


def cmd_learn_anatomy(args):
    from .anatomy import learn_anatomy

    poses, _ = _corpus(args)
    model = learn_anatomy(poses, n_theta=args.n_theta, n_phi=args.n_phi, torso_dict_size=args.torsos, seed=args.corpus_seed)
    formats.save_model(model, args.out)
    log.info("wrote %s (%d poses)", args.out, len(poses))


def cmd_build_dict(args):
    from .baseline import build_dictionary, normalize_corpus

    cfg = _config(args)
    poses, labels = _corpus(args)
    model = _model(cfg)
    norm = normalize_corpus(poses, model)
    if labels is None or len(set(labels)) < 2:
        from .cluster import kmeans

        _, lab, _ = kmeans(norm.reshape(len(norm), -1), args.groups, np.random.default_rng(args.corpus_seed))
        labels = [f"group{g:02d}" for g in lab]
    groups = {}
    for p, lab in zip(norm, labels):
        groups.setdefault(lab, []).append(p)
    dct = build_dictionary({k: np.array(v) for k, v in sorted(groups.items())}, args.atoms)
    for w in dct.warnings:
        log.warning(w)
    formats.save_dictionary(dct, args.out)


def _frame_index(frames):
    return [(i,) for i in range(len(frames))]


def _fit_job(job):
    from .pipeline import fit_frame

    fr, model, dct, cfg = job
    f = fit_frame(fr.detections, dct, model, cfg)
    return formats.FitRecord(fr.frame_id, f.pose, f.camera, tuple(f.trace), tuple(int(i) for i in f.code.support), f.valid)


def cmd_fit(args):
    from .experiments import _map

    cfg = _config(args)
    model, dct = _model(cfg), _dictionary(cfg)
    frames = formats.read_frames(args.frames)
    recs = _map(_fit_job, [(fr, model, dct, cfg) for fr in frames], args.workers)
    formats.write_fits(recs, args.out)


def _hyp_job(job):
    from .pipeline import hypothesize_frame

    fr, model, dct, cfg, index = job
    res = hypothesize_frame(fr.detections, model, dct, cfg, index)
    hs = res.sets[cfg.k]
    prov = tuple((int(a), int(b)) for a, b in zip(hs.sample_index, hs.cluster_id))
    return formats.HypothesisRecord(fr.frame_id, hs.poses, prov, res.context.camera, res.context.digest(), hs.source)


def cmd_hypothesize(args):
    from .experiments import _map

    cfg = _config(args)
    model, dct = _model(cfg), _dictionary(cfg)
    frames = formats.read_frames(args.frames)
    jobs = [(fr, model, dct, cfg, idx) for fr, idx in zip(frames, _frame_index(frames))]
    recs = _map(_hyp_job, jobs, args.workers)
    formats.write_hypotheses(recs, args.out)


def cmd_evaluate(args):
    from .metrics import PCK_THRESHOLDS, best_of_k, evaluate_pose, pck_curve

    frames = {fr.frame_id: fr for fr in formats.read_frames(args.frames)}
    hyps = formats.read_hypotheses(args.hypotheses)
    rows, errs = [], []
    for h in hyps:
        fr = frames.get(h.frame_id)
        if fr is None or fr.gt3d is None:
            raise ValueError(f"{args.frames}: no ground truth for frame {h.frame_id!r}")
        i, e = best_of_k(h.poses, fr.gt3d)
        je = evaluate_pose(h.poses[i], fr.gt3d)
        errs.append(je)
        rows.append({"frame": h.frame_id, "k": len(h.poses), "best_index": i, "mpjpe": e, "action": fr.action})
    key = "best_of_k"
    report = {
        "metadata": {
            "experiment": "evaluate",
            "frames": str(args.frames),
            "hypotheses": str(args.hypotheses),
            "evaluation": "limb rescale, then similarity alignment on all joints",
        },
        "summary": {"frames": len(rows), key: float(np.mean([r["mpjpe"] for r in rows])) if rows else None},
        "pck": {"thresholds": PCK_THRESHOLDS.tolist(), "curves": {key: pck_curve(np.concatenate(errs)).tolist()} if errs else {}},
        "frames": rows,
    }
    formats.write_report(report, args.out)


def cmd_synth_bench(args):
    from .experiments import CameraDistribution, missing_joint_experiment, synth_benchmark, synthetic_frames

    cfg = _config(args)
    model, dct = _model(cfg), _dictionary(cfg)
    cams = CameraDistribution()
    if args.missing:
        frames = synthetic_frames(model, args.n_frames, cfg.seed, cams, args.noise)
        report = missing_joint_experiment(frames, model, dct, args.missing, cfg.k, cfg.seed, cfg, args.workers)
    else:
        report = synth_benchmark(model, dct, args.n_frames, args.ks, cfg.seed, cfg, cams, args.noise, args.workers)
    if args.frames_out:
        formats.write_frames(synthetic_frames(model, args.n_frames, cfg.seed, cams, args.noise), args.frames_out)
    formats.write_report(report, args.out)
    log.info("summary %s", report["summary"])


def cmd_emit_plots(args):
    from .plots import emit

    if args.report is None and args.hypotheses is None:
        raise UsageError("give --report and/or --hypotheses")
    report = formats.read_report(args.report) if args.report else None
    hyps = formats.read_hypotheses(args.hypotheses) if args.hypotheses else None
    if hyps is not None and args.frame:
        hyps = [h for h in hyps if h.frame_id in set(args.frame)]
    for p in emit(report, args.out_dir, hyps):
        print(p)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="posehyp", description="Multiple 3D pose hypotheses from 2D joint detections.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def corpus_flags(q):
        q.add_argument("--corpus", help="frame file whose gt3d poses form the corpus")
        q.add_argument("--synthetic", type=int, help="use N poses from the built-in synthetic generator")
        q.add_argument("--corpus-seed", type=int, default=0)

    q = sub.add_parser("learn-anatomy", help="learn occupancy, planes, lengths and torsos from 3D poses")
    corpus_flags(q)
    q.add_argument("--n-theta", type=int, default=36)
    q.add_argument("--n-phi", type=int, default=18)
    q.add_argument("--torsos", type=int, default=16, help="torso dictionary size")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_learn_anatomy)

    q = sub.add_parser("build-dict", help="build the sparse-coding pose dictionary")
    corpus_flags(q)
    q.add_argument("--atoms", type=int, default=8, help="atoms per group")
    q.add_argument("--groups", type=int, default=8, help="clusters when the corpus has no action labels")
    q.add_argument("--out", required=True)
    _add_config_flags(q)
    q.set_defaults(func=cmd_build_dict)

    for name, func, helptext in (
        ("fit", cmd_fit, "baseline 2D-to-3D fit per frame"),
        ("hypothesize", cmd_hypothesize, "k pose hypotheses per frame"),
    ):
        q = sub.add_parser(name, help=helptext)
        q.add_argument("--frames", required=True)
        q.add_argument("--out", required=True)
        q.add_argument("--workers", type=int, default=1)
        _add_config_flags(q)
        q.set_defaults(func=func)

    q = sub.add_parser("evaluate", help="best-of-k errors of a hypothesis file against ground truth")
    q.add_argument("--frames", required=True)
    q.add_argument("--hypotheses", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_evaluate)

    q = sub.add_parser("synth-bench", help="closed-loop benchmark on synthetic frames")
    q.add_argument("--n-frames", type=int, default=50)
    q.add_argument("--ks", type=int, nargs="+", default=[1, 5, 20])
    q.add_argument("--noise", type=float, default=0.0, help="detection noise (pixels)")
    q.add_argument("--missing", type=int, nargs="*", help="run the missing-joints protocol for these counts")
    q.add_argument("--frames-out", help="also write the synthetic frames")
    q.add_argument("--workers", type=int, default=1)
    q.add_argument("--out", required=True)
    _add_config_flags(q)
    q.set_defaults(func=cmd_synth_bench)

    q = sub.add_parser("emit-plots", help="CSV tables and SVG figures from reports and hypotheses")
    q.add_argument("--report")
    q.add_argument("--hypotheses")
    q.add_argument("--frame", nargs="*", help="only these frame ids")
    q.add_argument("--out-dir", required=True)
    q.set_defaults(func=cmd_emit_plots)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be >= 1")
    try:
        args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"posehyp: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleContextError as e:
        print(f"posehyp: infeasible context: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (formats.FormatError, OSError, ValueError) as e:
        print(f"posehyp: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
