"""Batch pipeline entry point.

One JSON config file with sections scenario/learning/datagen/planner feeds
every command; command-line flags override file values, file values override
defaults. Each command writes its artifacts plus a manifest with git-style
content hashes, so a rerun with the same inputs and seed is byte-identical.

Exit codes: 0 success, 2 config error, 3 missing input.
"""
import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .datagen import (
    PolicyGenSpec,
    collect_dataset,
    default_x0_pool,
    gen_leader_policies,
    load_dataset,
    save_dataset,
)
from .gridworld import Action, DRIVER_PRESETS, Scenario, TYPE_WEIGHTS
from .learning import (
    LearnConfig,
    adapt_driver,
    load_utility_json,
    run_meta_training,
    save_utility_json,
)
from .planning import (
    SimulatedDriver,
    episode_to_dict,
    receding_horizon_drive,
    render_episode_svg,
)


class ConfigError(Exception):
    pass


class MissingInput(Exception):
    pass


CONFIG_KEYS = {
    "scenario": {"grid", "obstacles", "goal", "goal_reward", "T", "sigma",
                 "lambda", "gamma", "max_episode_steps"},
    "learning": {"alpha", "beta", "n_train", "n_test", "max_outer_iters",
                 "adapt_iters", "adapt_sample_size", "seed", "first_order",
                 "tasks_per_batch", "mu"},
    "datagen": {"mode", "count", "scale", "seed", "n_samples", "types"},
    "planner": {"mode", "sigma_mode", "seed", "driver_seed"},
}


def load_config(path):
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise MissingInput(f"config file not found: {path}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}")
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    for section, body in cfg.items():
        if section not in CONFIG_KEYS:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(body, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        bad = set(body) - CONFIG_KEYS[section]
        if bad:
            raise ConfigError(f"unknown keys in {section!r}: {sorted(bad)}")
    return cfg


def scenario_from_config(cfg):
    base = Scenario().to_dict()
    sec = cfg.get("scenario", {})
    for key, val in sec.items():
        if key == "grid":
            base["grid"] = {**base["grid"], **val}
        else:
            base[key] = val
    try:
        return Scenario.from_dict(base)
    except (ValueError, KeyError, TypeError) as e:
        raise ConfigError(f"bad scenario config: {e}")


def pick(cfg, section, key, default, flag=None):
    """flag > config file > default."""
    if flag is not None:
        return flag
    return cfg.get(section, {}).get(key, default)


def learn_config_from(cfg, **flags):
    base = LearnConfig()
    sec = dict(cfg.get("learning", {}))
    sec.pop("mu", None)
    merged = {f: getattr(base, f) for f in base.__dataclass_fields__}
    merged.update(sec)
    merged.update({k: v for k, v in flags.items() if v is not None})
    try:
        return LearnConfig(**merged)
    except TypeError as e:
        raise ConfigError(f"bad learning config: {e}")


def type_weights_from(cfg):
    mu = cfg.get("learning", {}).get("mu")
    if mu is None:
        return dict(TYPE_WEIGHTS)
    try:
        return {int(k): float(v) for k, v in mu.items()}
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad mu table: {e}")


def parse_types(text):
    try:
        ids = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"bad --types value {text!r}")
    for t in ids:
        if t not in DRIVER_PRESETS:
            raise ConfigError(f"unknown driver type {t}")
    return ids


def parse_x0(text, scn):
    try:
        p, y, v = (int(c) for c in text.split(","))
    except ValueError:
        raise ConfigError(f"bad --x0 value {text!r}, expected p,y,v")
    if not (0 <= p < scn.P and 0 <= y < scn.L and 0 <= v < scn.V):
        raise ConfigError(f"x0 {text!r} is outside the grid")
    return (p, y, v)


def parse_override(text, scn):
    if "=" not in text:
        raise ConfigError(f"bad --override {text!r}, expected p,y,v=action")
    state_part, _, action_part = text.partition("=")
    state = parse_x0(state_part, scn)
    try:
        action = Action[action_part.strip().upper()]
    except KeyError:
        raise ConfigError(f"unknown action {action_part!r} in override")
    return (state, int(action))


def git_blob_hash(path):
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\x00" % len(data) + data).hexdigest()


def write_manifest(manifest_path, command, config, seed, inputs, outputs):
    doc = {
        "command": command,
        "config": None if config is None else str(config),
        "seed": seed,
        "inputs": sorted(str(i) for i in inputs),
        "outputs": {str(o): git_blob_hash(o) for o in sorted(map(str, outputs))},
    }
    Path(manifest_path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def dataset_path(data_dir, theta):
    return Path(data_dir) / f"type_{theta}.jsonl"


def require_file(path, what):
    if not Path(path).exists():
        raise MissingInput(f"{what} not found: {path}")
    return Path(path)


def cmd_gen_data(args):
    cfg = load_config(args.config)
    scn = scenario_from_config(cfg)
    seed = pick(cfg, "datagen", "seed", 0, args.seed)
    spec = PolicyGenSpec(
        mode=pick(cfg, "datagen", "mode", "dirichlet_random", args.mode),
        count=pick(cfg, "datagen", "count", 8, args.count),
        scale=pick(cfg, "datagen", "scale", 0.3, args.scale),
        seed=seed,
    )
    n_samples = pick(cfg, "datagen", "n_samples", 200, args.samples)
    if args.types is not None:
        types = parse_types(args.types)
    else:
        types = [int(t) for t in cfg.get("datagen", {}).get(
            "types", sorted(DRIVER_PRESETS))]
        for t in types:
            if t not in DRIVER_PRESETS:
                raise ConfigError(f"unknown driver type {t}")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    policies = gen_leader_policies(spec, scn)
    pool = default_x0_pool(scn)
    outputs = []
    for theta in types:
        ds = collect_dataset(DRIVER_PRESETS[theta], policies, n_samples, pool,
                             scn, seed=seed + theta, type_id=theta)
        path = dataset_path(out_dir, theta)
        save_dataset(path, ds, scn)
        outputs.append(path)
    write_manifest(out_dir / "manifest.json", "gen-data", args.config, seed,
                   [args.config] if args.config else [], outputs)
    print(f"wrote {len(outputs)} dataset file(s) to {out_dir}")
    return 0


def _loss_csv_rows(history, scn, tracked):
    header = ["iter", "overall"] + [
        "x_%d_%d_%d" % scn.decode(sid) for sid in tracked]
    rows = []
    for i in range(len(history["overall"])):
        row = [i, repr(float(history["overall"][i]))]
        row += [repr(float(history[sid][i])) for sid in tracked]
        rows.append(row)
    return header, rows


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def cmd_meta_train(args):
    cfg = load_config(args.config)
    scn = scenario_from_config(cfg)
    lc = learn_config_from(cfg, max_outer_iters=args.iters, seed=args.seed)
    mu = type_weights_from(cfg)
    datasets = {}
    for theta, w in sorted(mu.items()):
        if w <= 0:
            continue
        path = require_file(dataset_path(args.data_dir, theta),
                            f"dataset for type {theta}")
        datasets[theta] = load_dataset(path, scn)
    tracked = [scn.encode(*x) for x in ((0, 0, 0), (0, 2, 0))
               if x[0] < scn.P and x[1] < scn.L and x[2] < scn.V]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    loss_csv = Path(args.loss_csv)
    outputs = [out, loss_csv]

    if args.seed_sweep:
        overalls = []
        g_first = None
        for s in range(lc.seed, lc.seed + args.seed_sweep):
            cfg_s = LearnConfig(**{**{f: getattr(lc, f) for f in
                                      lc.__dataclass_fields__}, "seed": s})
            g, hist = run_meta_training(datasets, mu, scn, cfg_s,
                                        track_states=tracked)
            overalls.append(hist["overall"])
            if g_first is None:
                g_first = g
        arr = np.array(overalls)
        header = ["iter", "mean", "std"]
        rows = [[i, repr(float(arr[:, i].mean())), repr(float(arr[:, i].std()))]
                for i in range(arr.shape[1])]
        _write_csv(loss_csv, header, rows)
        save_utility_json(out, g_first, meta={"command": "meta-train",
                                              "seed": lc.seed,
                                              "seed_sweep": args.seed_sweep,
                                              "iters": lc.max_outer_iters})
    else:
        g_meta, hist = run_meta_training(datasets, mu, scn, cfg=lc,
                                         track_states=tracked)
        header, rows = _loss_csv_rows(hist, scn, tracked)
        _write_csv(loss_csv, header, rows)
        save_utility_json(out, g_meta, meta={"command": "meta-train",
                                             "seed": lc.seed,
                                             "iters": lc.max_outer_iters})
    write_manifest(out.with_suffix(".manifest.json"), "meta-train",
                   args.config, lc.seed,
                   [dataset_path(args.data_dir, t) for t in datasets], outputs)
    print(f"wrote {out} and {loss_csv}")
    return 0


def cmd_adapt(args):
    cfg = load_config(args.config)
    scn = scenario_from_config(cfg)
    if args.type not in DRIVER_PRESETS:
        raise ConfigError(f"unknown driver type {args.type}")
    lc = learn_config_from(cfg, adapt_iters=args.adapt_iters,
                           adapt_sample_size=args.sample_size, seed=args.seed)
    meta_path = require_file(args.meta, "meta utility table")
    g_meta, _ = load_utility_json(meta_path)
    ds_path = require_file(dataset_path(args.data_dir, args.type),
                           f"dataset for type {args.type}")
    dataset = load_dataset(ds_path, scn)
    g_theta = adapt_driver(g_meta, dataset, scn, cfg=lc)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_utility_json(out, g_theta, meta={"command": "adapt",
                                          "type": args.type,
                                          "seed": lc.seed,
                                          "adapt_iters": lc.adapt_iters})
    write_manifest(out.with_suffix(".manifest.json"), "adapt", args.config,
                   lc.seed, [meta_path, ds_path], [out])
    print(f"wrote {out}")
    return 0


def cmd_drive(args):
    cfg = load_config(args.config)
    scn = scenario_from_config(cfg)
    if args.type not in DRIVER_PRESETS:
        raise ConfigError(f"unknown driver type {args.type}")
    mode = pick(cfg, "planner", "mode", "shared", args.mode)
    sigma_mode = pick(cfg, "planner", "sigma_mode", "replan_relative",
                      args.sigma_mode)
    if mode not in ("shared", "driver_only"):
        raise ConfigError(f"unknown mode {mode!r}")
    if sigma_mode not in ("replan_relative", "absolute"):
        raise ConfigError(f"unknown sigma mode {sigma_mode!r}")
    seed = pick(cfg, "planner", "seed", 0, args.seed)
    driver_seed = pick(cfg, "planner", "driver_seed", seed, args.driver_seed)
    x0 = parse_x0(args.x0, scn)
    overrides = tuple(parse_override(o, scn) for o in (args.override or []))

    inputs = []
    if mode == "driver_only":
        gL = np.zeros((scn.n_states, 6, 6))
    else:
        if args.table is None:
            raise ConfigError("shared mode needs --table")
        table_path = require_file(args.table, "utility table")
        gL, _ = load_utility_json(table_path)
        inputs.append(table_path)

    driver = SimulatedDriver(DRIVER_PRESETS[args.type],
                             rationality=scn.rationality, seed=driver_seed,
                             overrides=overrides)
    log = receding_horizon_drive(gL, driver, x0, scn, mode=mode,
                                 sigma_mode=sigma_mode, planner_seed=seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    doc = episode_to_dict(log, scn, driver_type=args.type)
    doc["seed"] = seed
    doc["driver_seed"] = driver_seed
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    outputs = [out]
    if args.svg:
        Path(args.svg).write_text(render_episode_svg(log, scn))
        outputs.append(Path(args.svg))
    write_manifest(out.with_suffix(".manifest.json"), "drive", args.config,
                   seed, inputs, outputs)
    tag = "reached" if log.reached_goal else "did not reach"
    print(f"episode {tag} the goal in {len(log.steps)} step(s); wrote {out}")
    return 0


def cmd_eval(args):
    ep_dir = Path(args.episodes)
    if not ep_dir.is_dir():
        raise MissingInput(f"episode directory not found: {ep_dir}")
    rows = []
    for path in sorted(ep_dir.glob("*.json")):
        if path.name.endswith(".manifest.json") or path.name == "manifest.json":
            continue
        doc = json.loads(path.read_text())
        if "summary" not in doc:
            continue
        s = doc["summary"]
        rows.append([
            path.name,
            doc.get("driver_type"),
            doc.get("mode"),
            doc.get("sigma_mode"),
            "_".join(str(c) for c in doc.get("x0", [])),
            s["reached_goal"],
            "" if s["steps_to_goal"] is None else s["steps_to_goal"],
            repr(float(s["final_reward"])),
        ])
    header = ["file", "driver_type", "mode", "sigma_mode", "x0",
              "reached_goal", "steps_to_goal", "final_reward"]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(out, header, rows)
    outputs = [out]

    groups = {}
    for row in rows:
        groups.setdefault((row[1], row[2]), []).append(row)
    lines = []
    for (theta, mode), members in sorted(groups.items(), key=str):
        reached = [m for m in members if m[5]]
        steps = [m[6] for m in reached if m[6] != ""]
        mean_steps = sum(steps) / len(steps) if steps else float("nan")
        mean_reward = sum(float(m[7]) for m in members) / len(members)
        lines.append(f"type {theta} {mode}: {len(reached)}/{len(members)} "
                     f"reached, mean steps {mean_steps:.1f}, "
                     f"mean final reward {mean_reward:.2f}")
    if not lines:
        lines = ["no episodes"]
    summary_path = Path(args.summary) if args.summary else out.with_suffix(".txt")
    summary_path.write_text("\n".join(lines) + "\n")
    outputs.append(summary_path)
    write_manifest(out.with_suffix(".manifest.json"), "eval", None, None,
                   sorted(str(p) for p in ep_dir.glob("*.json")
                          if not p.name.endswith("manifest.json")), outputs)
    print("\n".join(lines))
    return 0


def build_parser():
    ap = argparse.ArgumentParser(
        prog="codrive",
        description="assistive shared-control pipeline (data, training, driving)")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="roll out leader policies and record "
                                        "driver replies, one JSONL per type")
    g.add_argument("--config")
    g.add_argument("--out-dir", required=True)
    g.add_argument("--types", help="comma list, default all presets")
    g.add_argument("--seed", type=int)
    g.add_argument("--count", type=int, help="number of leader policies")
    g.add_argument("--scale", type=float)
    g.add_argument("--mode", choices=["dirichlet_random", "perturbed_dp"])
    g.add_argument("--samples", type=int, help="samples per type")
    g.set_defaults(fn=cmd_gen_data)

    m = sub.add_parser("meta-train", help="train the shared meta utility")
    m.add_argument("--config")
    m.add_argument("--data-dir", required=True)
    m.add_argument("--out", required=True, help="meta table JSON path")
    m.add_argument("--loss-csv", required=True)
    m.add_argument("--iters", type=int)
    m.add_argument("--seed", type=int)
    m.add_argument("--seed-sweep", type=int,
                   help="run N seeds and write a mean/std loss summary")
    m.set_defaults(fn=cmd_meta_train)

    a = sub.add_parser("adapt", help="specialize the meta table to one type")
    a.add_argument("--config")
    a.add_argument("--meta", required=True)
    a.add_argument("--data-dir", required=True)
    a.add_argument("--type", type=int, required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--adapt-iters", type=int)
    a.add_argument("--sample-size", type=int)
    a.add_argument("--seed", type=int)
    a.set_defaults(fn=cmd_adapt)

    d = sub.add_parser("drive", help="run one receding-horizon episode")
    d.add_argument("--config")
    d.add_argument("--table", help="planner utility table JSON")
    d.add_argument("--type", type=int, required=True)
    d.add_argument("--x0", required=True, help="p,y,v")
    d.add_argument("--mode", choices=["shared", "driver_only"])
    d.add_argument("--sigma-mode", choices=["replan_relative", "absolute"])
    d.add_argument("--override", action="append",
                   help="p,y,v=action forced driver choice, repeatable")
    d.add_argument("--seed", type=int)
    d.add_argument("--driver-seed", type=int)
    d.add_argument("--out", required=True)
    d.add_argument("--svg")
    d.set_defaults(fn=cmd_drive)

    e = sub.add_parser("eval", help="tabulate episode outcomes")
    e.add_argument("--episodes", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--summary")
    e.set_defaults(fn=cmd_eval)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except MissingInput as e:
        print(f"missing input: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
