"""Batch command-line interface.

Verbs: ``simulate`` (insect dataset generation), ``evidence`` (per-model
evidence estimation), ``select`` (model posteriors and summaries),
``compare`` (method-vs-gold tables), ``report`` (plain-text run summary).

Every command writes a manifest echoing the resolved configuration, its
hash, and the tool version; every output file embeds
``{seed, config_hash, schema_version}``. Per-task seeds derive from the
master seed through ``numpy.random.SeedSequence(master, spawn_key=(task_index,))``
with tasks enumerated in canonical (model, method, repeat) order, so
``--jobs`` parallelism never changes results. Timing fields
(``wall_time_s``) are informational and excluded from reproducibility
guarantees.

Exit codes: 0 success (warnings allowed), 2 usage error, 3 data error,
4 numerical failure (no task succeeded).
"""

import argparse
import concurrent.futures
import csv
import hashlib
import json
import os
import sys
import tempfile

import numpy as np

from . import __version__, coral, lifestage
from .evidence import (
    EvidenceEstimate,
    SampleSchedule,
    bic_log_evidence,
    laplace_is,
    laplace_log_evidence,
    robust_amis,
    standard_amis,
)
from .mcmc import bridge_sample, nuts_sample, split_rhat
from .optim import find_map
from .selection import (
    identifiability_proxy,
    inclusion_probabilities,
    model_posterior,
    tvd,
)

SCHEMA_VERSION = 1
CORAL_MODELS = ("logistic", "gompertz", "richards")
ALL_METHODS = ("bic", "laplace", "laplace-is", "standard-amis", "robust-amis", "bridge")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

PRESETS = {
    "desk": {
        "n_is": 100_000,
        "amis_start": 1_000,
        "amis_stages": 16,
        "k_pl": 50,
        "pathfinder_runs": 50,
        "pathfinder_max_iters": 100,
        "nuts_warmup": 1_000,
        "nuts_keep_coral": 5_000,
        "nuts_keep_insect": 4_000,
        "nuts_chains": 5,
        "bridge_nq": 100_000,
        "bridge_fit": 10_000,
        "bridge_reserve_coral": 90_000,
        "bridge_reserve_insect": 5_000,
        "map_restarts": 4,
    },
    "paper": {
        "n_is": 1_000_000,
        "amis_start": 10_000,
        "amis_stages": 16,
        "k_pl": 50,
        "pathfinder_runs": 50,
        "pathfinder_max_iters": 100,
        "nuts_warmup": 1_000,
        "nuts_keep_coral": 20_000,
        "nuts_keep_insect": 3_000,
        "nuts_chains": 5,
        "bridge_nq": 1_000_000,
        "bridge_fit": 10_000,
        "bridge_reserve_coral": 90_000,
        "bridge_reserve_insect": 5_000,
        "map_restarts": 4,
    },
}


def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path, payload):
    _atomic_write(path, json.dumps(payload, indent=1, allow_nan=False) + "\n")


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(v) for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def _config_hash(config):
    payload = {k: v for k, v in sorted(config.items()) if k != "out"}
    blob = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _write_manifest(out_dir, command, config):
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "command": command,
        "config": config,
        "config_hash": _config_hash(config),
        "seed": config.get("seed"),
    }
    _write_json(os.path.join(out_dir, f"manifest_{command}.json"), manifest)
    return manifest


def _task_seed(master_seed, model, method, rep):
    """Stable per-task seed: a content key, not a positional counter, so a
    subset rerun reproduces the numbers of the full batch."""
    digest = hashlib.sha256(f"{model}|{method}|{rep}".encode()).digest()
    words = tuple(int.from_bytes(digest[i:i + 4], "little") for i in range(0, 12, 4))
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=words)
    return int(seq.generate_state(1, dtype=np.uint64)[0] % (2**63))


def desk_subset(truth_mask):
    """Truth mask, its valid single-mechanism deletions, and the full mask."""
    masks = [truth_mask]
    for i, active in enumerate(truth_mask.flags):
        if not active:
            continue
        flags = list(truth_mask.flags)
        flags[i] = False
        m = lifestage.MechanismMask(tuple(flags))
        if m.supports_equilibrium():
            masks.append(m)
    full = lifestage.MechanismMask((True,) * 6)
    if all(m.index != full.index for m in masks):
        masks.append(full)
    seen = set()
    out = []
    for m in masks:
        if m.index not in seen:
            seen.add(m.index)
            out.append(m)
    return out


# ---------------------------------------------------------------- simulate


def cmd_simulate(args):
    config = {
        "family": "insect",
        "seed": args.seed,
        "masks": args.mask or ("all-valid" if args.all_valid else []),
        "out": args.out,
    }
    os.makedirs(args.out, exist_ok=True)
    manifest = _write_manifest(args.out, "simulate", config)
    if args.all_valid:
        masks = [m.to_string() for m in lifestage.valid_masks()]
    else:
        masks = list(args.mask or [])
    if not masks:
        print("error: provide --mask or --all-valid", file=sys.stderr)
        return EXIT_USAGE

    skipped = []
    written = 0
    for bits in masks:
        mask = lifestage.MechanismMask.from_string(bits)
        try:
            ds = lifestage.simulate_dataset(mask, seed=args.seed)
        except lifestage.UnsupportedModelError as exc:
            skipped.append({"mask": bits, "reason": str(exc)})
            continue
        payload = ds.to_json_dict()
        payload["config_hash"] = manifest["config_hash"]
        _write_json(os.path.join(args.out, f"dataset_{mask.label()}.json"), payload)
        ds.save_csv(os.path.join(args.out, f"dataset_{mask.label()}.csv"))
        written += 1
    if skipped:
        _write_json(
            os.path.join(args.out, "skip_report.json"),
            {"schema_version": SCHEMA_VERSION, "seed": args.seed,
             "config_hash": manifest["config_hash"], "skipped": skipped},
        )
    print(f"simulate: wrote {written} datasets, skipped {len(skipped)}")
    return EXIT_OK


# ---------------------------------------------------------------- evidence


def _load_insect_dataset(args):
    if args.dataset:
        return lifestage.InsectDataset.load(args.dataset)
    raise FileNotFoundError("insect family needs --dataset (run `evidest simulate` first)")


def _resolve_models(args, dataset):
    if args.family == "coral":
        if args.models in ("all", None):
            return list(CORAL_MODELS)
        names = args.models.split(",")
        for n in names:
            if n not in CORAL_MODELS:
                raise ValueError(f"unknown coral model {n!r}")
        return names
    if args.models in ("all",):
        return [m.to_string() for m in
                (lifestage.MechanismMask.from_index(i) for i in range(lifestage.N_MODELS))]
    if args.models in ("valid",):
        return [m.to_string() for m in lifestage.valid_masks()]
    if args.models in ("subset8", None):
        return [m.to_string() for m in desk_subset(dataset.truth_mask)]
    return args.models.split(",")


def _resolve_methods(arg):
    if arg in ("all", None):
        return list(ALL_METHODS)
    methods = arg.split(",")
    for m in methods:
        if m not in ALL_METHODS:
            raise ValueError(f"unknown method {m!r}")
    return methods


def _build_target(family, model, dataset):
    if family == "coral":
        kind = coral.CoralModelKind(model)
        return coral.coral_target(kind, dataset), 11 if dataset is None else dataset.n_obs
    mask = lifestage.MechanismMask.from_string(model)
    return lifestage.insect_target(mask, dataset), dataset.observations.size


def run_evidence_task(family, model, method, dataset, budget, seed, out_dir,
                      config_hash, save_samples=0, save_chains=False):
    """One (model, method, repeat) unit of work; returns the estimate dict."""
    rng = np.random.default_rng(seed)
    target, n_obs = _build_target(family, model, dataset)
    schedule = SampleSchedule.geometric(
        budget["amis_start"], budget["n_is"], budget["amis_stages"]
    )
    samples = None
    if method in ("bic", "laplace", "laplace-is", "standard-amis"):
        map_result = find_map(target, restarts=budget["map_restarts"], rng=rng)
    if method == "bic":
        est = bic_log_evidence(target, map_result, n_obs=n_obs)
    elif method == "laplace":
        est = laplace_log_evidence(target, map_result)
    elif method == "laplace-is":
        est, samples = laplace_is(target, map_result, n=budget["n_is"], rng=rng)
    elif method == "standard-amis":
        est, samples = standard_amis(
            target, map_result, schedule=schedule, k_pl=budget["k_pl"], rng=rng
        )
    elif method == "robust-amis":
        est, samples = robust_amis(
            target, schedule=schedule, k_pl=budget["k_pl"],
            pathfinder_runs=budget["pathfinder_runs"],
            pathfinder_max_iters=budget["pathfinder_max_iters"], rng=rng,
        )
    elif method == "bridge":
        n_keep = budget["nuts_keep_coral"] if family == "coral" else budget["nuts_keep_insect"]
        reserve = (
            budget["bridge_reserve_coral"] if family == "coral"
            else budget["bridge_reserve_insect"]
        )
        chains = nuts_sample(
            target, chains=budget["nuts_chains"], n_warmup=budget["nuts_warmup"],
            n_keep=n_keep, rng=rng,
        )
        rhat_max = max(split_rhat(chains, j) for j in range(target.dim))
        result = bridge_sample(
            target, chains, n_q=budget["bridge_nq"], k=budget["k_pl"], rng=rng,
            fit_count=budget["bridge_fit"], reserve_cap=reserve,
        )
        est = EvidenceEstimate(
            log_z=result.log_z, method="bridge", ess=np.nan, pareto_k=None,
            n_total=budget["bridge_nq"], n_stages=[budget["bridge_nq"]],
            wall_time_s=result.wall_time_s, model_label=target.label,
            flags=(chains.flags + ([] if result.converged else ["bridge_not_converged"])
                   + [f"rhat_max_{rhat_max:.4f}"]),
        )
        if save_chains:
            chains.save(os.path.join(out_dir, f"chains_{target.label}"), prefix="chain")
    else:
        raise ValueError(f"unknown method {method}")

    est.seed = seed
    est.method = method  # canonical CLI method name (estimators use underscores)
    payload = est.to_dict()
    payload["config_hash"] = config_hash
    payload["family"] = family
    payload["model"] = model
    if samples is not None and save_samples > 0:
        take = min(save_samples, samples.n)
        lw = samples.log_weights
        keep = np.argsort(lw)[-take:]
        header = [f"theta_{j}" for j in range(target.dim)] + ["log_weight"]
        rows = [
            list(samples.thetas[i]) + [lw[i]]
            for i in keep
        ]
        _write_csv(
            os.path.join(out_dir, f"samples_{model}_{method}_s{seed}.csv"), header, rows
        )
        try:
            report = identifiability_proxy(samples, target.prior)
            payload["max_sd_ratio"] = report.max_ratio
        except ValueError:
            payload["max_sd_ratio"] = None
    return payload


def _evidence_task_wrapper(packed):
    (family, model, method, rep, dataset_dict, budget, seed, out_dir,
     config_hash, save_samples, save_chains) = packed
    if family == "coral":
        dataset = coral.CoralDataset(
            times=np.array(dataset_dict["times"]), covers=np.array(dataset_dict["covers"])
        )
    else:
        dataset = lifestage.InsectDataset.from_json_dict(dataset_dict)
    try:
        payload = run_evidence_task(
            family, model, method, dataset, budget, seed, out_dir, config_hash,
            save_samples=save_samples, save_chains=save_chains,
        )
        payload["repeat"] = rep
        return (model, method, rep, payload, None)
    except Exception as exc:  # failures recorded per-task, batch continues
        return (model, method, rep, None, f"{type(exc).__name__}: {exc}")


def cmd_evidence(args):
    budget = dict(PRESETS[args.preset])
    for key in ("n_is", "bridge_nq", "bridge_fit", "nuts_warmup", "amis_stages",
                "amis_start", "pathfinder_runs", "pathfinder_max_iters"):
        flag = getattr(args, key, None)
        if flag is not None:
            budget[key] = flag
    if args.nuts_keep is not None:
        budget["nuts_keep_coral"] = args.nuts_keep
        budget["nuts_keep_insect"] = args.nuts_keep

    if args.family == "coral":
        dataset = coral.load_dataset(args.dataset)
        dataset_dict = {"times": dataset.times.tolist(), "covers": dataset.covers.tolist()}
    else:
        try:
            dataset = _load_insect_dataset(args)
        except FileNotFoundError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_DATA
        dataset_dict = dataset.to_json_dict()

    try:
        models = _resolve_models(args, dataset)
        methods = _resolve_methods(args.methods)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    config = {
        "family": args.family, "dataset": args.dataset, "models": models,
        "methods": methods, "seed": args.seed, "preset": args.preset,
        "repeats": args.repeats, "budget": budget, "out": args.out,
        "save_samples": args.save_samples, "save_chains": args.save_chains,
    }
    os.makedirs(args.out, exist_ok=True)
    manifest = _write_manifest(args.out, "evidence", config)

    tasks = []
    for model in models:
        for method in methods:
            for rep in range(args.repeats):
                seed = _task_seed(args.seed, model, method, rep)
                tasks.append((args.family, model, method, rep, dataset_dict, budget,
                              seed, args.out, manifest["config_hash"],
                              args.save_samples, args.save_chains))

    n_ok, n_fail = 0, 0
    results = []
    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_evidence_task_wrapper, tasks))
    else:
        results = [_evidence_task_wrapper(t) for t in tasks]

    for model, method, rep, payload, error in results:
        name = f"est_{model}_{method}_r{rep}.json"
        if payload is not None:
            _write_json(os.path.join(args.out, name), payload)
            n_ok += 1
        else:
            _write_json(
                os.path.join(args.out, f"fail_{model}_{method}_r{rep}.json"),
                {"schema_version": SCHEMA_VERSION, "model": model, "method": method,
                 "repeat": rep, "error": error,
                 "config_hash": manifest["config_hash"], "seed": args.seed},
            )
            n_fail += 1
            print(f"warning: {model}/{method} rep {rep} failed: {error}", file=sys.stderr)
    print(f"evidence: {n_ok} estimates written, {n_fail} failures")
    if n_ok == 0 and n_fail > 0:
        return EXIT_NUMERICAL
    return EXIT_OK


# ---------------------------------------------------------------- select


def _read_estimates(directory):
    out = []
    for name in sorted(os.listdir(directory)):
        if name.startswith("est_") and name.endswith(".json"):
            with open(os.path.join(directory, name), encoding="utf-8") as fh:
                out.append(json.load(fh))
    return out


def _mask_from_label(label):
    bits = label.split("_")[-1]
    return lifestage.MechanismMask.from_string(bits)


def cmd_select(args):
    estimates = _read_estimates(args.estimates)
    chosen = [e for e in estimates if e["method"] == args.method
              and e.get("repeat", 0) == args.repeat]
    if not chosen:
        print(f"error: no estimates for method {args.method!r} in {args.estimates}",
              file=sys.stderr)
        return EXIT_DATA
    chosen.sort(key=lambda e: e["model"])
    labels = [e["model"] for e in chosen]
    missing = [lab for lab, e in zip(labels, chosen) if e["log_z"] is None]
    if missing:
        print(f"error: missing/undefined evidences for: {missing}", file=sys.stderr)
        return EXIT_DATA
    log_z = np.array([e["log_z"] for e in chosen])

    config = {"estimates": args.estimates, "method": args.method,
              "repeat": args.repeat, "seed": chosen[0].get("seed"), "out": args.out}
    os.makedirs(args.out, exist_ok=True)
    manifest = _write_manifest(args.out, "select", config)

    post = model_posterior(log_z, labels=labels)
    payload = post.to_dict(method=args.method, seed=config["seed"])
    payload["config_hash"] = manifest["config_hash"]
    _write_json(os.path.join(args.out, f"model_posterior_{args.method}.json"), payload)

    order = np.argsort(post.probabilities)[::-1]
    _write_csv(
        os.path.join(args.out, f"ranked_{args.method}.csv"),
        ["rank", "model", "log_evidence", "probability"],
        [
            [r + 1, labels[i], f"{log_z[i]:.6f}", f"{post.probabilities[i]:.6g}"]
            for r, i in enumerate(order)
        ],
    )

    if labels and labels[0].startswith("mask"):
        rows = []
        for m_i, name in enumerate(lifestage.DEATH_NAMES):
            prob = inclusion_probabilities(
                post, lambda lab, i=m_i: _mask_from_label(lab).flags[i]
            )
            rows.append([name, f"{prob:.6g}"])
        _write_csv(os.path.join(args.out, f"inclusion_{args.method}.csv"),
                   ["mechanism", "probability"], rows)
    print(f"select: posterior over {len(labels)} models written")
    return EXIT_OK


# ---------------------------------------------------------------- compare


def cmd_compare(args):
    estimates = _read_estimates(args.estimates)
    if not estimates:
        print("error: no estimates found", file=sys.stderr)
        return EXIT_DATA
    config = {"estimates": args.estimates, "gold": args.gold, "out": args.out}
    os.makedirs(args.out, exist_ok=True)
    _write_manifest(args.out, "compare", config)

    by_mm = {}
    for e in estimates:
        if e["log_z"] is None:
            continue
        by_mm.setdefault((e["model"], e["method"]), []).append(e)

    models = sorted({m for m, _ in by_mm})
    methods = sorted({meth for _, meth in by_mm})
    if args.gold not in methods:
        print(f"error: gold method {args.gold!r} has no estimates", file=sys.stderr)
        return EXIT_DATA

    gold = {}
    for model in models:
        runs = by_mm.get((model, args.gold), [])
        if runs:
            gold[model] = float(np.mean([e["log_z"] for e in runs]))

    bias_rows = []
    for method in methods:
        for model in models:
            runs = by_mm.get((model, method), [])
            if not runs or model not in gold:
                continue
            errs = np.array([e["log_z"] - gold[model] for e in runs])
            sd = f"{errs.std(ddof=1):.6g}" if errs.size > 1 else ""
            if errs.size <= 1:
                flag = "sd_omitted_single_run"
            else:
                flag = ""
            bias_rows.append([method, model, f"{errs.mean():.6g}", sd, errs.size, flag])
    _write_csv(os.path.join(args.out, "bias_table.csv"),
               ["method", "model", "mean_err", "sd_err", "n_runs", "flags"], bias_rows)

    ess_rows = []
    for method in methods:
        for model in models:
            runs = by_mm.get((model, method), [])
            vals = [e["ess"] for e in runs if e.get("ess") is not None]
            if vals:
                ess_rows.append([method, model, f"{np.median(vals):.6g}"])
    _write_csv(os.path.join(args.out, "ess_table.csv"),
               ["method", "model", "median_ess"], ess_rows)

    n_reps = max((e.get("repeat", 0) for e in estimates), default=0) + 1
    tvd_rows = []
    for method in methods:
        if method == args.gold:
            continue
        for rep in range(n_reps):
            lz_m, lz_g = [], []
            ok = True
            for model in models:
                runs_m = [e for e in by_mm.get((model, method), []) if e.get("repeat", 0) == rep]
                if not runs_m or model not in gold:
                    ok = False
                    break
                lz_m.append(runs_m[0]["log_z"])
                lz_g.append(gold[model])
            if not ok:
                continue
            post_m = model_posterior(np.array(lz_m), labels=models)
            post_g = model_posterior(np.array(lz_g), labels=models)
            tvd_rows.append([method, rep, f"{tvd(post_m, post_g):.6g}"])
    _write_csv(os.path.join(args.out, "tvd_table.csv"),
               ["method", "repeat", "tvd_vs_gold"], tvd_rows)

    scatter_rows = []
    for (model, method), runs in sorted(by_mm.items()):
        for e in runs:
            if model not in gold:
                continue
            ratio = e.get("max_sd_ratio")
            scatter_rows.append([
                method, model, e.get("repeat", 0),
                f"{e['log_z'] - gold[model]:.6g}",
                "" if ratio is None else f"{ratio:.6g}",
            ])
    _write_csv(os.path.join(args.out, "error_vs_identifiability.csv"),
               ["method", "model", "repeat", "logz_err", "max_sd_ratio"], scatter_rows)
    print(f"compare: tables written for {len(methods)} methods x {len(models)} models")
    return EXIT_OK


# ---------------------------------------------------------------- report


def cmd_report(args):
    lines = [f"evidest {__version__} run report: {args.dir}"]
    for name in sorted(os.listdir(args.dir)):
        if name.startswith("manifest_"):
            with open(os.path.join(args.dir, name), encoding="utf-8") as fh:
                m = json.load(fh)
            lines.append(f"  {m['command']}: config_hash={m['config_hash']} seed={m.get('seed')}")
    estimates = _read_estimates(args.dir)
    if estimates:
        lines.append(f"  estimates: {len(estimates)}")
        by_method = {}
        for e in estimates:
            by_method.setdefault(e["method"], []).append(e)
        for method, group in sorted(by_method.items()):
            flags = sum(len(e.get("flags", [])) for e in group)
            lines.append(f"    {method}: {len(group)} runs, {flags} flags")
    fails = [n for n in os.listdir(args.dir) if n.startswith("fail_")]
    if fails:
        lines.append(f"  failures: {len(fails)}")
    text = "\n".join(lines)
    print(text)
    _atomic_write(os.path.join(args.dir, "report.txt"), text + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="evidest",
        description="Bayesian model-evidence estimation and model selection batches.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate insect life-stage datasets")
    p_sim.add_argument("--family", choices=["insect"], default="insect")
    p_sim.add_argument("--mask", action="append", help="6-char mechanism mask, repeatable")
    p_sim.add_argument("--all-valid", action="store_true",
                       help="every mask passing the equilibrium pre-check")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=cmd_simulate)

    p_ev = sub.add_parser("evidence", help="estimate model evidences")
    p_ev.add_argument("--family", choices=["coral", "insect"], required=True)
    p_ev.add_argument("--dataset", help="dataset file (coral CSV / insect JSON)")
    p_ev.add_argument("--models", default=None,
                      help="comma list, or all/valid/subset8 (insect), all (coral)")
    p_ev.add_argument("--methods", default="all", help=f"comma list from {ALL_METHODS}")
    p_ev.add_argument("--seed", type=int, default=0)
    p_ev.add_argument("--preset", choices=list(PRESETS), default="desk")
    p_ev.add_argument("--repeats", type=int, default=1)
    p_ev.add_argument("--jobs", type=int, default=1)
    p_ev.add_argument("--out", required=True)
    p_ev.add_argument("--save-samples", type=int, default=0, metavar="N",
                      help="dump the N highest-weight samples per IS run")
    p_ev.add_argument("--save-chains", action="store_true")
    p_ev.add_argument("--n-is", type=int, dest="n_is")
    p_ev.add_argument("--amis-start", type=int, dest="amis_start")
    p_ev.add_argument("--amis-stages", type=int, dest="amis_stages")
    p_ev.add_argument("--bridge-nq", type=int, dest="bridge_nq")
    p_ev.add_argument("--bridge-fit", type=int, dest="bridge_fit")
    p_ev.add_argument("--nuts-warmup", type=int, dest="nuts_warmup")
    p_ev.add_argument("--nuts-keep", type=int, dest="nuts_keep")
    p_ev.add_argument("--pathfinder-runs", type=int, dest="pathfinder_runs")
    p_ev.add_argument("--pathfinder-max-iters", type=int, dest="pathfinder_max_iters")
    p_ev.set_defaults(func=cmd_evidence)

    p_sel = sub.add_parser("select", help="aggregate estimates into a model posterior")
    p_sel.add_argument("--estimates", required=True)
    p_sel.add_argument("--method", required=True)
    p_sel.add_argument("--repeat", type=int, default=0)
    p_sel.add_argument("--out", required=True)
    p_sel.set_defaults(func=cmd_select)

    p_cmp = sub.add_parser("compare", help="bias/ESS/TVD tables against a gold method")
    p_cmp.add_argument("--estimates", required=True)
    p_cmp.add_argument("--gold", default="bridge",
                       help="gold standard = mean log-evidence of this method's runs")
    p_cmp.add_argument("--out", required=True)
    p_cmp.set_defaults(func=cmd_compare)

    p_rep = sub.add_parser("report", help="summarize a run directory")
    p_rep.add_argument("--dir", required=True)
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
