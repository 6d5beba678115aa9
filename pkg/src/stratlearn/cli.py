"""Command-line interface and config-driven experiment runner.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict

import numpy as np

from . import __version__
from . import baselines as bl
from . import lid as lidmod
from . import metrics, movae, strata
from .diffusion import DiffusionModel, GaussianStrataMixture, NoiseSchedule, TrainConfig, sample_reverse, train_diffusion
from .errors import ConfigError, NumericError, ParseError
from .rng import derive_seed

log = logging.getLogger("stratlearn")

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3

STAGES = ("data", "train_diffusion", "lid", "baselines", "movae", "eval")


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _csv(path, rows, header, chash):
    strata.write_csv(path, rows, header=header, comment=f"config-hash: {chash}")


# stage implementations, shared by subcommands and `run`


def make_dataset(dcfg, seed):
    if "csv" in dcfg:
        return strata.load_bundle(dcfg["csv"])
    if "spec" in dcfg:
        spec = strata.StratifiedSpaceSpec.from_dict(dcfg["spec"])
    else:
        overrides = {k: dcfg[k] for k in ("noise_sigma", "ambient_dim", "embed_seed") if k in dcfg}
        spec = strata.preset(dcfg["preset"], **overrides)
    return strata.sample_stratified(spec, int(dcfg.get("n", 1000)), seed)


def train_config_from(d, seed):
    known = {"steps", "batch", "lr", "lr_final", "t_floor", "widths", "time_embed", "log_every"}
    bad = set(d) - known - {"beta_min", "beta_max", "T"}
    if bad:
        raise ConfigError(f"train_diffusion: unknown fields {sorted(bad)}")
    kw = {k: d[k] for k in known if k in d}
    for k in ("widths", "time_embed"):
        if k in kw:
            kw[k] = tuple(int(v) for v in kw[k])
    return TrainConfig(seed=seed, **kw)


def schedule_from(d):
    return NoiseSchedule(**{k: d[k] for k in ("beta_min", "beta_max", "T") if k in d})


def lid_config_from(d, seed, window=None):
    known = {"t_start", "t_end", "N", "rule", "floor_eps", "alpha", "chunk"}
    kw = {k: d[k] for k in known if k in d}
    if window is not None:
        kw["t_start"], kw["t_end"] = window
    return lidmod.LidConfig(seed=seed, **kw)


def movae_hyper_from(d):
    fields = set(movae.MoVaeHyper.__dataclass_fields__)
    bad = set(d) - fields - {"target_dims"}
    if bad:
        raise ConfigError(f"movae: unknown fields {sorted(bad)}")
    kw = {k: d[k] for k in fields if k in d}
    for k in ("hidden", "gate_hidden"):
        if k in kw:
            kw[k] = tuple(kw[k])
    return movae.MoVaeHyper(**kw)


def write_lid_outputs(out, ds, dims, cfg, alpha, chash, buckets=None):
    truth = ds.true_dim if ds.true_dim is not None else None
    report = lidmod.strata_report(dims, alpha, truth, buckets)
    body = {"config": asdict(cfg), **report.to_dict()}
    _write_json(os.path.join(out, "report.json"), body)
    rows = [(i, int(d), int(truth[i]) if truth is not None else -1) for i, d in enumerate(dims)]
    _csv(os.path.join(out, "per_point.csv"), rows, ["index", "dim", "true_dim"], chash)
    return report


def write_baseline_outputs(out, ds, k, var_threshold, chash):
    index = bl.KnnIndex(ds.points)
    lb = bl.levina_bickel(ds.points, k, index)
    lbr = bl.round_half_up(lb, 1, ds.points.shape[1])
    lp = bl.local_pca(ds.points, k, var_threshold, index)
    rows = [(i, lb[i], int(lbr[i]), int(lp[i])) for i in range(len(ds))]
    _csv(os.path.join(out, "baselines.csv"), rows, ["index", "lb_raw", "lb_rounded", "lpca"], chash)
    summary = {"k": k, "var_threshold": var_threshold,
               "levina_bickel": bl.summary(lb), "local_pca": bl.summary(lp)}
    if ds.true_dim is not None:
        summary["levina_bickel"]["accuracy"] = float(np.mean(lbr == ds.true_dim))
        summary["local_pca"]["accuracy"] = float(np.mean(lp == ds.true_dim))
    _write_json(os.path.join(out, "summary.json"), summary)
    return summary


def write_movae_outputs(out, res, hyper, chash, truth=None):
    movae.save_movae(res.model, os.path.join(out, "model.json"), hyper)
    rows = [(i, int(res.labels[i]), *res.soft[i]) for i in range(len(res.labels))]
    header = ["index", "expert"] + [f"p{k + 1}" for k in range(res.model.K)]
    _csv(os.path.join(out, "routing.csv"), rows, header, chash)
    hist = [(h["epoch"], h["phase"], h["loss"]) for h in res.history]
    _csv(os.path.join(out, "history.csv"), hist, ["epoch", "phase", "loss"], chash)
    summary = {"warnings": res.warnings, "mixture_weights": res.model.mixture_weights().tolist()}
    if truth is not None:
        acc, perm = metrics.label_accuracy(res.labels, truth)
        summary["routing_accuracy"] = acc
        summary["permutation"] = list(perm)
    _write_json(os.path.join(out, "summary.json"), summary)
    return summary


# `run`


def validate_config(cfg):
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - set(STAGES) - {"name", "seed", "out"}
    if unknown:
        raise ConfigError(f"unknown top-level fields {sorted(unknown)}")
    if "seed" in cfg and not isinstance(cfg["seed"], int):
        raise ConfigError("seed: must be an integer")
    data = cfg.get("data")
    if not isinstance(data, dict):
        raise ConfigError("data: required object")
    if not any(k in data for k in ("preset", "spec", "csv")):
        raise ConfigError("data: one of preset, spec or csv is required")
    if "preset" in data and data["preset"] not in strata.PRESETS:
        raise ConfigError(f"data.preset: unknown preset {data['preset']!r}")
    if "csv" in data and not os.path.exists(data["csv"]):
        raise ConfigError(f"data.csv: missing dependency {data['csv']!r}")
    if "n" in data and (not isinstance(data["n"], int) or data["n"] < 0):
        raise ConfigError("data.n: must be a nonnegative integer")
    if "lid" in cfg:
        lc = cfg["lid"]
        src = lc.get("source", "diffusion")
        if src not in ("diffusion", "oracle"):
            raise ConfigError("lid.source: must be 'diffusion' or 'oracle'")
        if src == "diffusion" and "train_diffusion" not in cfg:
            ckpt = lc.get("checkpoint")
            if ckpt is None:
                raise ConfigError("lid: missing dependency: needs a train_diffusion stage or lid.checkpoint")
            if not os.path.exists(ckpt):
                raise ConfigError(f"lid.checkpoint: missing dependency {ckpt!r}")
        for w in lc.get("windows", []):
            if len(w) != 2 or not 0 < w[0] < w[1]:
                raise ConfigError(f"lid.windows: bad window {w!r}")
    if "movae" in cfg and not cfg["movae"].get("target_dims"):
        raise ConfigError("movae.target_dims: required list of expert dimensions")
    if "eval" in cfg:
        models = cfg["eval"].get("models", [])
        for m in models:
            if m not in ("diffusion", "movae"):
                raise ConfigError(f"eval.models: unknown model {m!r}")
            stage = "train_diffusion" if m == "diffusion" else "movae"
            if stage not in cfg:
                raise ConfigError(f"eval.models: missing dependency: {m} needs the {stage} stage")


def run_experiment(cfg, out, threads=1):
    """Run all configured stages in order; returns the exit status."""
    validate_config(cfg)
    seed = int(cfg.get("seed", 0))
    chash = config_hash(cfg)
    os.makedirs(out, exist_ok=True)
    failed_marker = os.path.join(out, "FAILED")
    if os.path.exists(failed_marker):
        os.remove(failed_marker)
    meta = {"config": cfg, "config_hash": chash, "versions": {
        "stratlearn": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "wall_times": {}}
    state = {}

    def stage(name, fn):
        t0 = time.perf_counter()
        d = os.path.join(out, name)
        os.makedirs(d, exist_ok=True)
        try:
            fn(d)
        finally:
            meta["wall_times"][name] = time.perf_counter() - t0
            _write_json(os.path.join(out, "meta.json"), meta)

    def do_data(d):
        ds = make_dataset(cfg["data"], derive_seed(seed, "data"))
        strata.save_bundle(ds, d, comment=f"config-hash: {chash}")
        state["data"] = ds

    def do_diffusion(d):
        tc = cfg["train_diffusion"]
        model = train_diffusion(state["data"], train_config_from(tc, derive_seed(seed, "train_diffusion")),
                                schedule_from(tc))
        model.save(os.path.join(d, "model.json"))
        _csv(os.path.join(d, "loss.csv"), list(enumerate(model.loss_trace)), ["step", "loss"], chash)
        state["diffusion"] = model

    def do_lid(d):
        lc = cfg["lid"]
        ds = state["data"]
        if lc.get("source", "diffusion") == "oracle":
            source = GaussianStrataMixture.from_spec(ds.spec)
        else:
            source = state.get("diffusion") or DiffusionModel.load(lc["checkpoint"])
        windows = lc.get("windows") or [[lc.get("t_start", 0.03), lc.get("t_end", 0.031)]]
        alpha = lc.get("alpha", 0.01)
        rows = []
        for i, w in enumerate(windows):
            lcfg = lid_config_from(lc, derive_seed(seed, "lid"), w)
            dims = lidmod.estimate_dims(source, ds, lcfg, threads=threads)
            sub = d if len(windows) == 1 else os.path.join(d, f"window_{i}")
            os.makedirs(sub, exist_ok=True)
            write_lid_outputs(sub, ds, dims, lcfg, alpha, chash, lc.get("buckets"))
            if ds.true_dim is not None:
                r = lidmod.table1_row(dims, ds.true_dim, w)
                rows.append([r[c] for c in lidmod.TABLE1_COLUMNS])
        if rows:
            _csv(os.path.join(d, "table1.csv"), rows, lidmod.TABLE1_COLUMNS, chash)

    def do_baselines(d):
        bc = cfg["baselines"]
        write_baseline_outputs(d, state["data"], int(bc.get("k", 20)),
                               float(bc.get("var_threshold", 0.95)), chash)

    def do_movae(d):
        mc = cfg["movae"]
        hyper = movae_hyper_from(mc)
        res = movae.train_movae(state["data"], mc["target_dims"], hyper, derive_seed(seed, "movae"))
        write_movae_outputs(d, res, hyper, chash, state["data"].stratum_label)
        state["movae"] = res.model

    def do_eval(d):
        ec = cfg["eval"]
        ds = state["data"]
        ref = ds.clean if ds.clean is not None else ds.points
        n_proj = int(ec.get("n_projections", 128))
        n_samp = int(ec.get("n_samples", 5000))
        report = {"n_projections": n_proj, "n_samples": n_samp, "values": {}, "kept": {}}
        rows = []
        for m in ec.get("models", []):
            if m == "diffusion":
                trunc = 2.0 * float(np.max(np.linalg.norm(ds.points, axis=1)))
                res = sample_reverse(state["diffusion"], n_samp, int(ec.get("steps", 1000)),
                                     float(ec.get("tau", 1e-3)), trunc, derive_seed(seed, "eval-sampler"))
                gen = res.samples[res.kept]
            else:
                gen, _ = movae.movae_generate(state["movae"], n_samp, derive_seed(seed, "eval-generate"))
            report["kept"][m] = int(gen.shape[0])
            if gen.shape[0] == 0:
                log.warning("eval: no %s samples survived truncation", m)
                val = None
            else:
                x, y = metrics.match_sizes(gen, ref, derive_seed(seed, "eval-subsample"))
                val = metrics.sliced_w1(x, y, n_proj, derive_seed(seed, "eval-projections"))
            report["values"][m] = val
            sigma = ds.spec.noise_sigma if ds.spec is not None else float("nan")
            rows.append((sigma, m, float("nan") if val is None else val))
        _write_json(os.path.join(d, "w1.json"), report)
        _csv(os.path.join(d, "w1.csv"), rows, ["sigma", "method", "W1"], chash)

    plan = [("data", do_data), ("train_diffusion", do_diffusion), ("lid", do_lid),
            ("baselines", do_baselines), ("movae", do_movae), ("eval", do_eval)]
    for name, fn in plan:
        if name != "data" and name not in cfg:
            continue
        try:
            stage(name, fn)
        except (ConfigError, ParseError) as exc:
            _fail(failed_marker, name, exc)
            return EXIT_CONFIG
        except Exception as exc:  # any stage crash becomes exit 3
            _fail(failed_marker, name, exc)
            return EXIT_STAGE
    return EXIT_OK


def _fail(marker, stage, exc):
    log.error("stage %s failed: %s", stage, exc)
    with open(marker, "w") as fh:
        fh.write(f"stage: {stage}\nerror: {type(exc).__name__}: {exc}\n")


# argument parsing


def _ints(s):
    return [int(v) for v in s.split(",") if v]


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="stratlearn", description=__doc__, parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", parents=[common], help="sample a preset stratified space")
    s.add_argument("--preset", default="circle_sphere", choices=sorted(strata.PRESETS))
    s.add_argument("--spec", help="JSON file with a StratifiedSpaceSpec (overrides --preset)")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--noise", type=float)
    s.add_argument("--ambient-dim", type=int)

    s = sub.add_parser("noise", parents=[common], help="add Gaussian noise to a CSV point cloud")
    s.add_argument("--input", required=True)
    s.add_argument("--sigma", type=float, required=True)
    s.add_argument("--header", action="store_true")

    s = sub.add_parser("embed", parents=[common], help="isometrically embed a CSV point cloud")
    s.add_argument("--input", required=True)
    s.add_argument("--ambient-dim", type=int, required=True)
    s.add_argument("--header", action="store_true")

    s = sub.add_parser("train-diffusion", parents=[common], help="train an eps-prediction model")
    s.add_argument("--data", required=True, help="bundle directory or CSV")
    s.add_argument("--steps", type=int, default=20000)
    s.add_argument("--batch", type=int, default=256)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--lr-final", type=float)
    s.add_argument("--t-floor", type=float, default=1e-4)
    s.add_argument("--widths", type=_ints, default=[512, 512, 512])
    s.add_argument("--time-embed", type=_ints, default=[64, 64])

    s = sub.add_parser("estimate-lid", parents=[common], help="per-point dimension estimates")
    s.add_argument("--data", required=True)
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", help="diffusion checkpoint JSON")
    src.add_argument("--oracle", action="store_true", help="analytic score from the bundle's spec")
    s.add_argument("--t-start", type=float, default=0.03)
    s.add_argument("--t-end", type=float, default=0.031)
    s.add_argument("--N", type=int, default=500)
    s.add_argument("--rule", choices=["ratio", "gap"], default="ratio")
    s.add_argument("--floor-eps", type=float, default=1e-6)
    s.add_argument("--alpha", type=float, default=0.01)
    s.add_argument("--buckets", type=_ints)

    s = sub.add_parser("baselines", parents=[common], help="Levina-Bickel and local PCA")
    s.add_argument("--data", required=True)
    s.add_argument("--k", type=int, default=20)
    s.add_argument("--var-threshold", type=float, default=0.95)

    s = sub.add_parser("train-movae", parents=[common], help="train the stratified mixture of VAEs")
    s.add_argument("--data", required=True)
    s.add_argument("--dims", type=_ints, required=True, help="expert target dims, e.g. 1,2")
    s.add_argument("--epochs1", type=int, default=2000)
    s.add_argument("--epochs2", type=int, default=2000)
    s.add_argument("--gamma", type=float, default=movae.MoVaeHyper.gamma)
    s.add_argument("--batch", type=int, default=256)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--latent-dim", type=int, default=4)
    s.add_argument("--hidden", type=_ints, default=[256, 256])

    s = sub.add_parser("generate", parents=[common], help="sample from a trained model")
    s.add_argument("--model", required=True)
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--steps", type=int, default=1000)
    s.add_argument("--tau", type=float, default=1e-3)
    s.add_argument("--trunc", type=float, help="sup-norm truncation level for diffusion samples")

    s = sub.add_parser("eval-w1", parents=[common], help="sliced W1 between two CSV samples")
    s.add_argument("--x", required=True)
    s.add_argument("--y", required=True)
    s.add_argument("--projections", type=int, default=128)

    s = sub.add_parser("run", parents=[common], help="run a JSON experiment config")
    s.add_argument("config")
    return p


def _load_data(path):
    if not os.path.exists(path):
        raise ConfigError(f"--data: missing dependency {path!r}")
    return strata.load_bundle(path)


def _dispatch(args):
    seed = getattr(args, "seed", 0)
    out = getattr(args, "out", None) or "out"
    threads = getattr(args, "threads", 1)
    cmd = args.command
    if cmd == "run":
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        if hasattr(args, "seed"):
            cfg["seed"] = seed
        out = getattr(args, "out", None) or cfg.get("out") or "out"
        return run_experiment(cfg, out, threads)

    os.makedirs(out, exist_ok=True)
    chash = config_hash({k: v for k, v in vars(args).items() if k != "quiet"})
    if cmd == "sample":
        if args.spec:
            with open(args.spec) as fh:
                spec = strata.StratifiedSpaceSpec.from_dict(json.load(fh))
        else:
            kw = {}
            if args.noise is not None:
                kw["noise_sigma"] = args.noise
            if args.ambient_dim is not None:
                kw["ambient_dim"] = args.ambient_dim
            spec = strata.preset(args.preset, **kw)
        ds = strata.sample_stratified(spec, args.n, seed)
        strata.save_bundle(ds, out, comment=f"config-hash: {chash}")
    elif cmd in ("noise", "embed"):
        pts = strata.ingest_csv(args.input, header=args.header).points
        if cmd == "noise":
            pts = strata.add_noise(pts, args.sigma, seed)
        else:
            pts = strata.embed(pts, args.ambient_dim, seed)
        _csv(os.path.join(out, "points.csv"), pts, None, chash)
    elif cmd == "train-diffusion":
        ds = _load_data(args.data)
        cfg = TrainConfig(args.steps, args.batch, args.lr, args.lr_final, args.t_floor,
                          tuple(args.widths), tuple(args.time_embed), seed)
        model = train_diffusion(ds, cfg)
        model.save(os.path.join(out, "model.json"))
        _csv(os.path.join(out, "loss.csv"), list(enumerate(model.loss_trace)), ["step", "loss"], chash)
    elif cmd == "estimate-lid":
        ds = _load_data(args.data)
        if args.oracle:
            if ds.spec is None:
                raise ConfigError("--oracle needs a bundle with meta.json spec")
            source = GaussianStrataMixture.from_spec(ds.spec)
        else:
            if not os.path.exists(args.model):
                raise ConfigError(f"--model: missing dependency {args.model!r}")
            source = DiffusionModel.load(args.model)
        cfg = lidmod.LidConfig(args.t_start, args.t_end, args.N, args.rule, args.floor_eps,
                               args.alpha, seed)
        dims = lidmod.estimate_dims(source, ds, cfg, threads=threads)
        write_lid_outputs(out, ds, dims, cfg, args.alpha, chash, args.buckets)
    elif cmd == "baselines":
        write_baseline_outputs(out, _load_data(args.data), args.k, args.var_threshold, chash)
    elif cmd == "train-movae":
        ds = _load_data(args.data)
        hyper = movae.MoVaeHyper(gamma=args.gamma, epochs_phase1=args.epochs1,
                                 epochs_phase2=args.epochs2, batch=args.batch, lr=args.lr,
                                 latent_dim=args.latent_dim, hidden=tuple(args.hidden))
        res = movae.train_movae(ds, args.dims, hyper, seed)
        write_movae_outputs(out, res, hyper, chash, ds.stratum_label)
    elif cmd == "generate":
        if not os.path.exists(args.model):
            raise ConfigError(f"--model: missing dependency {args.model!r}")
        with open(args.model) as fh:
            blob = json.load(fh)
        if "eps_net" in blob:
            res = sample_reverse(DiffusionModel.from_dict(blob), args.n, args.steps, args.tau,
                                 args.trunc, seed)
            rows, labels = res.samples, res.kept.astype(int)
            header = "kept"
        else:
            rows, labels = movae.movae_generate(movae.MoVaeModel.from_dict(blob), args.n, seed)
            header = "expert"
        _csv(os.path.join(out, "samples.csv"), rows, None, chash)
        _csv(os.path.join(out, "labels.csv"), labels[:, None], [header], chash)
    elif cmd == "eval-w1":
        x = strata.ingest_csv(args.x).points
        y = strata.ingest_csv(args.y).points
        x, y = metrics.match_sizes(x, y, seed)
        val = metrics.sliced_w1(x, y, args.projections, seed)
        _write_json(os.path.join(out, "w1.json"), {
            "metric": "sliced_w1", "value": val, "n_projections": args.projections,
            "seed": seed, "n": int(x.shape[0])})
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING if getattr(args, "quiet", False) else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except (ConfigError, ParseError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, OSError, ValueError) as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
