"""Command-line interface: ``softtree <command> [options]``.

Exit status is 0 on success, 1 on a usage or input error and 2 on a
numerical failure (divergence, non-convergence).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields

import numpy as np

from . import baselines, envsim, oblique, policies, rl, supervised
from .difftree import SoftTree

log = logging.getLogger("softtree")

SECTIONS = {
    "train": supervised.TrainConfig,
    "ppo": rl.PpoConfig,
    "env": envsim.EnvConfig,
    "ga": baselines.GaConfig,
}

# config sections each command reads
COMMAND_SECTIONS = {
    "gen-data": (),
    "train-clf": ("train",),
    "eval-clf": (),
    "freeze": (),
    "prune": (),
    "train-rl": ("ppo", "env"),
    "extract-policy": ("env",),
    "augment-policy": (),
    "eval-policy": ("env",),
    "baseline-dp": ("env",),
    "baseline-ga": ("ga", "env"),
    "compare": ("env",),
    "fit-dirichlet": ("env",),
    "export-tree": (),
}

DESK_SCALE = {"ppo": {"batches": 30, "tree_depth": 7}, "ga": {"generations": 50}}
DESK_EPISODES = 500


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- configuration -------------------------------------------------------------


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _field_names(section):
    return {f.name for f in fields(SECTIONS[section])}


def resolve_config(command, args):
    """Merge defaults, --desk-scale, --config and --set into one document."""
    sections = COMMAND_SECTIONS[command]
    resolved = {name: {} for name in sections}
    if args.desk_scale:
        for name in sections:
            resolved[name].update(DESK_SCALE.get(name, {}))
    seed = None
    if args.config:
        with open(args.config) as fh:
            doc = json.load(fh)
        for key, value in doc.items():
            if key in ("seed", "command"):
                continue
            if key not in SECTIONS:
                raise UsageError(f"unknown config section {key!r}")
            if key not in sections:
                continue
            unknown = set(value) - _field_names(key)
            if unknown:
                raise UsageError(f"unknown {key} keys: {sorted(unknown)}")
            resolved[key].update(value)
        seed = doc.get("seed")
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        if "." in key:
            section, name = key.split(".", 1)
            if section not in sections or name not in _field_names(section):
                raise UsageError(f"unknown setting {key!r} for {command}")
        else:
            owners = [s for s in sections if key in _field_names(s)]
            if len(owners) != 1:
                raise UsageError(
                    f"unknown setting {key!r} for {command}" if not owners
                    else f"ambiguous setting {key!r}; prefix it with one of {owners}"
                )
            section, name = owners[0], key
        resolved[section][name] = _parse_value(value)
    if args.seed is not None:
        seed = args.seed
    if seed is None:
        seed = int(os.environ.get("SOFTTREE_SEED", 0))
    for name in ("train", "ga"):
        if name in resolved:
            resolved[name]["seed"] = seed
    objects = {name: SECTIONS[name](**resolved[name]) for name in sections}
    full = {"command": command, "seed": seed}
    for name, obj in objects.items():
        full[name] = obj.to_dict()
    return seed, objects, full


# -- helpers -----------------------------------------------------------------


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _load_tree_doc(path):
    doc = _read_json(path)
    if doc.get("kind") != "oblique_tree":
        raise UsageError(f"{path}: not an oblique tree document")
    root, _ = oblique.tree_from_json(json.dumps(doc))
    scaler = supervised.Standardizer.from_dict(doc["scaler"]) if "scaler" in doc else None
    meta = {k: v for k, v in doc.items() if k not in ("kind", "root", "feature_names", "class_names")}
    return root, doc, scaler, meta


def _tree_json(root, doc, **meta):
    return oblique.tree_to_json(root, doc.get("feature_names"), doc.get("class_names"), **meta)


def _policy_names(paths, names):
    if names:
        out = names.split(",")
        if len(out) != len(paths):
            raise UsageError("--names must list one name per policy")
        return out
    return [os.path.splitext(os.path.basename(p))[0] for p in paths]


# -- commands ----------------------------------------------------------------


def cmd_gen_data(args, seed, objs):
    data = supervised.generate_dataset(args.n, seed)
    data.to_csv(args.out)
    log.info("wrote %d rows to %s", len(data), args.out)


def cmd_train_clf(args, seed, objs):
    data = supervised.ClassDataset.from_csv(args.data)
    result = supervised.train_classifier(data, objs["train"], log_every=args.log_every)
    X, y = data.subset("test")
    if len(y):
        acc = supervised.evaluate_accuracy(result.tree, X, y, result.scaler)
        print(json.dumps({"test_accuracy": acc}))
    doc = {
        "kind": "soft_tree_classifier",
        "tree": result.tree.to_dict(),
        "scaler": result.scaler.to_dict(),
        "config": objs["train"].to_dict(),
    }
    _write(args.out, json.dumps(doc, indent=1))
    if args.curve:
        keys = ["iteration", "loss", "temperature", "train_accuracy"]
        _write_rows(args.curve, keys, [[h[k] for k in keys] for h in result.history])


def _load_model(path):
    doc = _read_json(path)
    if doc.get("kind") == "soft_tree_classifier":
        return SoftTree.from_dict(doc["tree"]), supervised.Standardizer.from_dict(doc["scaler"])
    if doc.get("kind") == "oblique_tree":
        root, _, scaler, _ = _load_tree_doc(path)
        return root, scaler
    raise UsageError(f"{path}: expected a classifier or oblique tree document")


def cmd_eval_clf(args, seed, objs):
    model, scaler = _load_model(args.model)
    data = supervised.ClassDataset.from_csv(args.data)
    X, y = data.subset(args.split)
    acc = supervised.evaluate_accuracy(model, X, y, scaler)
    out = {"split": args.split, "n": int(len(y)), "accuracy": acc}
    if not isinstance(model, SoftTree):
        out["internal_nodes"] = oblique.n_internal(model)
    print(json.dumps(out))


def cmd_freeze(args, seed, objs):
    doc = _read_json(args.model)
    if doc.get("kind") != "soft_tree_classifier":
        raise UsageError(f"{args.model}: expected a soft tree classifier")
    tree = SoftTree.from_dict(doc["tree"])
    root = oblique.freeze(tree)
    names = [f"x{i + 1}" for i in range(tree.n_features)]
    _write(args.out, oblique.tree_to_json(root, names, None, scaler=doc["scaler"]))
    log.info("frozen tree: %d internal nodes", oblique.n_internal(root))


def cmd_prune(args, seed, objs):
    root, doc, _, meta = _load_tree_doc(args.tree)
    domain = oblique.simplex_domain(root.weights.size) if args.simplex and isinstance(root, oblique.Internal) else None
    before = oblique.n_internal(root)
    pruned = oblique.prune_all(root, args.epsilon, margin=args.margin, domain=domain)
    if pruned is None:
        raise UsageError("no leaf is reachable under the given domain")
    meta.update({"epsilon": args.epsilon})
    _write(args.out, _tree_json(pruned, doc, **meta))
    print(json.dumps({"internal_before": before, "internal_after": oblique.n_internal(pruned),
                      "pruned": before - oblique.n_internal(pruned)}))


def cmd_train_rl(args, seed, objs):
    config, cfg = objs["ppo"], objs["env"]
    if args.actor:
        config = rl.PpoConfig.from_dict({**config.to_dict(), "actor": args.actor})
    checkpoints = []

    def callback(record, actor, critic):
        log.info("batch %d mean cost %.1f", record["batch"], record["mean_cost"])
        if args.checkpoint_every and record["batch"] % args.checkpoint_every == 0:
            path = os.path.join(args.checkpoint_dir, f"checkpoint_{record['batch']:04d}.json")
            _write(path, json.dumps({**actor.to_dict(), "critic": critic.to_dict(), "batch": record["batch"]}))
            checkpoints.append(path)

    if args.checkpoint_every:
        os.makedirs(args.checkpoint_dir, exist_ok=True)
    result = rl.train_rl(cfg, config, seed=seed, callback=callback)
    doc = {**result.actor.to_dict(), "critic": result.critic.to_dict(), "config": config.to_dict()}
    _write(args.out, json.dumps(doc, indent=1))
    if args.curve:
        _write_rows(args.curve, ["batch", "mean_cost", "temperature"],
                    [[r["batch"], r["mean_cost"], r["temperature"]] for r in result.curve])
    if result.actor.kind == "tree" and (args.tree_out or args.dot_out):
        root = rl.extract_policy(result.actor, args.epsilon)
        _write_policy_tree(root, args.tree_out, args.dot_out)
    print(json.dumps({"final_mean_cost": result.curve[-1]["mean_cost"], "actor_params": result.actor.n_params}))


def _write_policy_tree(root, json_path, dot_path):
    if json_path:
        _write(json_path, policies.policy_to_json(rl.TreePolicy(root)))
    if dot_path:
        _write(dot_path, oblique.to_dot(root, policies.STATE_NAMES, envsim.ACTION_NAMES, name="policy"))


def cmd_extract_policy(args, seed, objs):
    doc = _read_json(args.actor)
    if doc.get("kind") != "soft_tree_actor":
        raise UsageError(f"{args.actor}: expected a soft tree actor")
    actor = rl.actor_from_dict(doc)
    root = rl.extract_policy(actor, args.epsilon, simplex=not args.no_simplex)
    if root is None:
        raise UsageError("no reachable leaf in the extracted tree")
    _write_policy_tree(root, args.out, args.dot)
    sys.stdout.write(oblique.to_rule_text(root, policies.STATE_NAMES))
    if args.episodes:
        cfg = objs["env"]
        a_mean = envsim.evaluate_policy(actor, args.episodes, seed, cfg)[0]
        t_mean = envsim.evaluate_policy(rl.TreePolicy(root), args.episodes, seed, cfg)[0]
        print(json.dumps({"actor_lcc": a_mean, "tree_lcc": t_mean, "internal_nodes": oblique.n_internal(root)}))


def cmd_augment_policy(args, seed, objs):
    root, doc, _, meta = _load_tree_doc(args.tree)
    weights = [float(v) for v in args.weights.split(",")]
    out = rl.augment_policy(root, weights, args.bias, args.action, args.position, args.fire_on)
    _write(args.out, _tree_json(out, doc, **meta))


def _episodes(args):
    if args.episodes is not None:
        return args.episodes
    return DESK_EPISODES if args.desk_scale else 1000


def cmd_eval_policy(args, seed, objs):
    cfg = objs["env"]
    policy = policies.load_policy(args.policy, cfg)
    n = _episodes(args)
    starts = envsim.sample_starts(n, seed, cfg)
    res = envsim.rollout(policy, starts, cfg, record=bool(args.trace))
    if args.trace:
        res.to_csv(args.trace, episode=0)
    print(json.dumps({"episodes": n, "seed": seed, "mean_lcc": float(res.cost.mean()),
                      "std_lcc": float(res.cost.std())}))


def cmd_baseline_dp(args, seed, objs):
    cfg = objs["env"]
    result = baselines.value_iteration(cfg, tol=args.tol)
    _write(args.out, policies.policy_to_json(result.policy, values=result.values.tolist(),
                                             sweeps=len(result.residuals)))
    if args.residuals:
        _write_rows(args.residuals, ["sweep", "residual"], list(enumerate(result.residuals, 1)))
    print(json.dumps({"table": result.policy.table, "sweeps": len(result.residuals),
                      "final_residual": result.residuals[-1]}))


def cmd_baseline_ga(args, seed, objs):
    cfg = objs["env"]
    result = baselines.ga_optimize(cfg, objs["ga"])
    _write(args.out, policies.policy_to_json(result.policy, mean_lcc=-result.fitness))
    if args.history:
        _write_rows(args.history, ["generation", "best_mean_lcc"], [(g, -f) for g, f in enumerate(result.history)])
    print(json.dumps({"thresholds": result.policy.thresholds, "mean_lcc": -result.fitness}))


def cmd_compare(args, seed, objs):
    cfg = objs["env"]
    paths = [p for p in args.policies.split(",") if p]
    if not paths:
        raise UsageError("--policies needs at least one file")
    names = _policy_names(paths, args.names)
    loaded = dict(zip(names, (policies.load_policy(p, cfg) for p in paths)))
    n = _episodes(args)
    if args.threads > 1:
        starts = envsim.sample_starts(n, seed, cfg)
        with ThreadPoolExecutor(args.threads) as pool:
            costs = list(pool.map(lambda p: envsim.rollout(p, starts, cfg).cost, loaded.values()))
        rows = [baselines.PolicyRow(k, float(c.mean()), float(c.std()), n) for k, c in zip(names, costs)]
        report = baselines.Report(rows, dict(zip(names, costs)))
    else:
        report = baselines.compare_policies(loaded, n, seed, cfg)
    sys.stdout.write(report.to_text())
    if args.csv:
        _write(args.csv, report.to_csv())


def cmd_fit_dirichlet(args, seed, objs):
    cfg = objs["env"]
    if args.data:
        samples = np.loadtxt(args.data, delimiter=",", skiprows=1, ndmin=2)[:, -envsim.N_STATES:]
    else:
        samples = envsim.reset(np.random.default_rng(seed), cfg.theta, size=args.sample)
    theta = envsim.fit_dirichlet(samples, zero_floor=args.floor)
    print(json.dumps({"theta": theta.tolist(), "mean": (theta / theta.sum()).tolist(), "n": len(samples)}))


def cmd_export_tree(args, seed, objs):
    root, doc, scaler, meta = _load_tree_doc(args.tree)
    names = doc.get("feature_names")
    if args.raw and scaler is not None:
        root = scaler.unscale_tree(root)
        meta.pop("scaler", None)
    classes = doc.get("class_names")
    if args.format == "json":
        text = oblique.tree_to_json(root, names, classes, **meta)
    elif args.format == "dot":
        text = oblique.to_dot(root, names, classes)
    else:
        text = oblique.to_rule_text(root, names)
    _write(args.out, text)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-clf": cmd_train_clf,
    "eval-clf": cmd_eval_clf,
    "freeze": cmd_freeze,
    "prune": cmd_prune,
    "train-rl": cmd_train_rl,
    "extract-policy": cmd_extract_policy,
    "augment-policy": cmd_augment_policy,
    "eval-policy": cmd_eval_policy,
    "baseline-dp": cmd_baseline_dp,
    "baseline-ga": cmd_baseline_ga,
    "compare": cmd_compare,
    "fit-dirichlet": cmd_fit_dirichlet,
    "export-tree": cmd_export_tree,
}


def build_parser():
    common = Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="global seed (default: $SOFTTREE_SEED or 0)")
    common.add_argument("--config", help="JSON config (e.g. a previously saved resolved config)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting")
    common.add_argument("--save-config", metavar="PATH", help="write the resolved config as JSON")
    common.add_argument("--desk-scale", action="store_true", help="reduced training and evaluation budgets")
    common.add_argument("--threads", type=int, default=1, help="worker threads for policy evaluation")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = Parser(prog="softtree", description="Soft decision trees for interpretable maintenance policies.")
    sub = parser.add_subparsers(dest="command", parser_class=Parser)

    p = sub.add_parser("gen-data", parents=[common], help="generate the synthetic four-class dataset")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-clf", parents=[common], help="train a soft tree classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--curve", help="training curve CSV")
    p.add_argument("--log-every", type=int, default=0)

    p = sub.add_parser("eval-clf", parents=[common], help="accuracy of a classifier or oblique tree")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=supervised.SPLITS)

    p = sub.add_parser("freeze", parents=[common], help="soft classifier -> oblique tree")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("prune", parents=[common], help="prune an oblique tree")
    p.add_argument("--tree", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--margin", type=float, default=0.0)
    p.add_argument("--simplex", action="store_true", help="restrict inputs to the probability simplex")

    p = sub.add_parser("train-rl", parents=[common], help="train a PPO actor")
    p.add_argument("--out", required=True, help="actor + critic JSON")
    p.add_argument("--actor", choices=("tree", "mlp"))
    p.add_argument("--curve", help="learning curve CSV")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--checkpoint-dir", default="checkpoints")
    p.add_argument("--tree-out", help="extracted policy tree JSON")
    p.add_argument("--dot-out", help="extracted policy tree DOT")
    p.add_argument("--epsilon", type=float, default=1e-3)

    p = sub.add_parser("extract-policy", parents=[common], help="freeze and prune a tree actor")
    p.add_argument("--actor", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dot")
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--no-simplex", action="store_true", help="skip the simplex domain in infeasibility checks")
    p.add_argument("--episodes", type=int, default=0, help="also compare actor and tree LCC")

    p = sub.add_parser("augment-policy", parents=[common], help="graft an agency rule onto a policy tree")
    p.add_argument("--tree", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--weights", required=True, help="comma-separated rule weights")
    p.add_argument("--bias", type=float, required=True)
    p.add_argument("--action", type=int, required=True)
    p.add_argument("--position", default="", help="L/R path to the node to graft above")
    p.add_argument("--fire-on", default="right", choices=("left", "right"))

    p = sub.add_parser("eval-policy", parents=[common], help="life-cycle cost of a policy")
    p.add_argument("--policy", required=True)
    p.add_argument("--episodes", type=int)
    p.add_argument("--trace", help="CSV trace of the first episode")

    p = sub.add_parser("baseline-dp", parents=[common], help="condition policy by value iteration")
    p.add_argument("--out", required=True)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--residuals", help="residual log CSV")

    p = sub.add_parser("baseline-ga", parents=[common], help="reliability thresholds by genetic algorithm")
    p.add_argument("--out", required=True)
    p.add_argument("--history", help="best-so-far LCC per generation CSV")

    p = sub.add_parser("compare", parents=[common], help="evaluate policies on shared episodes")
    p.add_argument("--policies", required=True, help="comma-separated policy files")
    p.add_argument("--names", help="comma-separated display names")
    p.add_argument("--episodes", type=int)
    p.add_argument("--csv")

    p = sub.add_parser("fit-dirichlet", parents=[common], help="maximum-likelihood Dirichlet fit")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--data", help="CSV whose last four columns are CS proportions (header row)")
    group.add_argument("--sample", type=int, help="fit to this many draws from the configured theta")
    p.add_argument("--floor", type=float, default=1e-6)

    p = sub.add_parser("export-tree", parents=[common], help="render a tree as JSON, DOT or rules")
    p.add_argument("--tree", required=True)
    p.add_argument("--format", default="rule-text", choices=("json", "dot", "rule-text"))
    p.add_argument("--out", default="-")
    p.add_argument("--raw", action="store_true", help="express splits in raw feature units")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        seed, objs, resolved = resolve_config(args.command, args)
        text = json.dumps(resolved, indent=1, default=list)
        log.info("resolved config: %s", text)
        if args.save_config:
            _write(args.save_config, text)
        COMMANDS[args.command](args, seed, objs)
    except (FloatingPointError, envsim.ConvergenceError, np.linalg.LinAlgError) as exc:
        print(f"softtree {args.command}: numeric failure: {exc}", file=sys.stderr)
        return 2
    except (UsageError, ValueError, KeyError, TypeError, OSError) as exc:
        print(f"softtree {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
