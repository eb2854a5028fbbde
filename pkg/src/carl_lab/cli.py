"""``carl-lab`` command line: data generation, training, evaluation, probes and MDP tools.

Run-style commands (gen-data, train-repr, train-hrl, eval, sweep) resolve a
config from defaults, an optional ``--config`` JSON file and flags, and write
the resolved config next to their outputs.  Exit status is 0 on success, 1 on
validation or runtime failure and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import config as C
from .carl import embed_state_goal, evaluate_infonce, load_carl, save_carl, train_carl
from .data import filter_coverage, filter_imbalance, generate_dataset, load_dataset, restrict_to_rooms, save_dataset
from .envs import GridRoomsEnv, UnsupportedOperation, env_from_descriptor, to_tabular
from .evalkit import (
    cardinal_pairs,
    cluster_separation_embeddings,
    evaluate,
    export_embeddings,
    nearest_neighbors,
    random_encoder,
    sweep,
    table_csv,
    table_text,
)
from .hrl import ConfigurationError, load_agent, save_agent, train_agent
from .mdp import TabularMdp, build_k_ball_mdp, check_dynamics_bisimilar, compute_k_ball

# -- flag tables --------------------------------------------------------------------
# (flag, config path, parser, help)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _int_list(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> list:
    return [x.strip() for x in text.split(",") if x.strip()]


def _value_list(text: str) -> list:
    out = []
    for x in _str_list(text):
        for conv in (int, float):
            try:
                out.append(conv(x))
                break
            except ValueError:
                continue
        else:
            out.append(x)
    return out


RUN_FLAGS = [
    ("--seed", "seed", int, "random seed"),
    ("--env", "env", str, "environment name (room1, rooms5, rooms20, point) or layout JSON path"),
    ("--out", "out", str, "output directory (gen-data also accepts a .carlds file path)"),
]
DATA_FLAGS = [
    ("--episodes", "data.episodes", int, "episodes of expert data to generate"),
    ("--noise", "data.noise", float, "probability of a random expert action"),
    ("--data-horizon", "data.horizon", int, "steps per generated episode"),
    ("--coverage-region", "data.coverage_region", str, "region for the coverage/imbalance filters"),
    ("--coverage-keep", "data.coverage_keep", float, "fraction of in-region transitions kept"),
    ("--imbalance-dir", "data.imbalance_dir", str, "action direction thinned by the imbalance filter"),
    ("--imbalance-remove", "data.imbalance_remove", float, "fraction of in-region moves in that direction removed"),
]
DATA_PATH_FLAG = [("--data", "data.path", str, "existing .carlds dataset (otherwise data is generated)")]
MODEL_FLAGS = [
    ("--variant", "model.variant", str, "carl, sa-carl, ma-pred or sa-pred"),
    ("--k", "model.k", int, "action-sequence horizon (also the subgoal step)"),
    ("--tau", "model.tau", float, "InfoNCE temperature"),
    ("--d", "model.d", int, "embedding dimension"),
    ("--stride", "model.stride", int, "action stride"),
    ("--goal-mode", "model.goal_mode", str, "interior or surface goal sampling"),
]
REPR_TRAIN_FLAGS = [
    ("--batch-size", "model.batch_size", int, "representation batch size"),
    ("--lr", "model.lr", float, "representation learning rate"),
    ("--steps", "model.steps", int, "representation training steps"),
]
REPR_IN_HRL_FLAGS = [
    ("--repr-batch-size", "model.batch_size", int, "representation batch size"),
    ("--repr-lr", "model.lr", float, "representation learning rate"),
    ("--repr-steps", "model.steps", int, "encoder pre-training steps (pretrain mode)"),
]
HRL_FLAGS = [
    ("--algo", "hrl.algo", str, "hiql or hgcbc"),
    ("--mode", "hrl.mode", str, "cotrain, pretrain or none"),
    ("--lambda-aux", "hrl.lambda_aux", float, "weight of the representation loss"),
    ("--kappa", "hrl.kappa", float, "expectile"),
    ("--beta", "hrl.beta", float, "AWR temperature"),
    ("--gamma", "hrl.gamma", float, "discount"),
    ("--steps", "hrl.steps", int, "agent training steps"),
    ("--batch-size", "hrl.batch_size", int, "agent batch size"),
    ("--lr", "hrl.lr", float, "agent learning rate"),
    ("--state-input", "hrl.state_input", _bool, "also feed raw states to value and policies (true/false)"),
    ("--train-rooms", "hrl.train_rooms", _int_list, "rooms whose data trains the agent, e.g. 0,1"),
    ("--encoder", "hrl.encoder", str, "trained representation checkpoint for pretrain mode"),
]
EVAL_PREFIXED_FLAGS = [
    ("--eval-episodes", "eval.episodes", int, "evaluation episodes per room"),
    ("--eval-horizon", "eval.horizon", int, "evaluation episode length"),
    ("--eval-rooms", "eval.rooms", _int_list, "rooms to evaluate, e.g. 1,2,3,4"),
]
EVAL_FLAGS = [
    ("--episodes", "eval.episodes", int, "evaluation episodes per room"),
    ("--horizon", "eval.horizon", int, "evaluation episode length"),
    ("--rooms", "eval.rooms", _int_list, "rooms to evaluate, e.g. 1,2,3,4"),
]
SWEEP_FLAGS = [
    ("--axis", "sweep.axis", str, "k, coverage, imbalance, lambda_aux or variant"),
    ("--values", "sweep.values", _value_list, "comma-separated axis values"),
    ("--seeds", "sweep.seeds", _int_list, "comma-separated seeds"),
    ("--methods", "sweep.methods", _str_list, "comma-separated method presets (carl, baseline, hgcbc, ...)"),
]

RUN_COMMANDS = {
    "gen-data": RUN_FLAGS + DATA_FLAGS,
    "train-repr": RUN_FLAGS + DATA_PATH_FLAG + DATA_FLAGS + MODEL_FLAGS + REPR_TRAIN_FLAGS,
    "train-hrl": RUN_FLAGS + DATA_PATH_FLAG + DATA_FLAGS + MODEL_FLAGS + REPR_IN_HRL_FLAGS + HRL_FLAGS
    + EVAL_PREFIXED_FLAGS,
    "eval": RUN_FLAGS + EVAL_FLAGS,
    "sweep": RUN_FLAGS + DATA_FLAGS + MODEL_FLAGS + REPR_IN_HRL_FLAGS + HRL_FLAGS + EVAL_PREFIXED_FLAGS
    + SWEEP_FLAGS,
}

DESCRIPTIONS = {
    "gen-data": "generate an offline dataset with a noisy goal-reaching expert",
    "train-repr": "train a contrastive (or prediction-ablation) representation",
    "train-hrl": "train a HIQL-lite or HGCBC hierarchy, optionally co-training the encoder",
    "eval": "evaluate a trained agent's success rate per room",
    "embed": "export state-goal embeddings as CSV and report cluster separation",
    "nn-query": "rank state-goal pairs by embedding similarity to a reference pair",
    "sweep": "train and evaluate over one hyperparameter axis, seeds and methods",
    "kball": "print the k-ball of a state in a tabular MDP",
    "bisim": "decide dynamics bisimilarity of two tabular MDPs (or their k-balls)",
    "env": "render, describe or export an environment",
}


def _add_table(p, table):
    seen = set()
    for flag, path, conv, help_text in table:
        if flag in seen:
            continue
        seen.add(flag)
        p.add_argument(flag, dest="cfg:" + path, type=conv, default=None, help=help_text,
                       metavar=flag[2:].upper().replace("-", "_"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="carl-lab", description="Contrastive action representations lab.",
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    subs = {}
    for name in DESCRIPTIONS:
        p = sub.add_parser(name, help=DESCRIPTIONS[name], description=DESCRIPTIONS[name])
        subs[name] = p
        if name in RUN_COMMANDS:
            p.add_argument("--config", help="JSON run config; flags override its values")
            _add_table(p, RUN_COMMANDS[name])
    subs["eval"].add_argument("--agent", required=True, help="agent checkpoint directory")
    subs["eval"].add_argument("--json", help="write the report JSON here")

    p = subs["embed"]
    p.add_argument("--model", required=True, help="representation or agent checkpoint, or 'random'")
    p.add_argument("--pairs", help="CSV of label,s*,g* columns (default: cardinal-direction pairs of --env)")
    p.add_argument("--env", default="rooms5", help="environment for the default pairs")
    p.add_argument("--seed", type=int, default=0, help="seed of the random encoder")
    p.add_argument("--out", required=True, help="output CSV")

    p = subs["nn-query"]
    p.add_argument("--model", required=True, help="representation or agent checkpoint, or 'random'")
    p.add_argument("--env", default="rooms5", help="grid environment providing candidate pairs")
    p.add_argument("--state", required=True, help="reference state cell 'x,y'")
    p.add_argument("--goal", required=True, help="reference goal cell 'x,y'")
    p.add_argument("--top-n", type=int, default=30, help="number of neighbours to return")
    p.add_argument("--bin-size", type=int, default=None, help="keep the best match per bin before ranking")
    p.add_argument("--max-dist", type=int, default=3, help="largest state-goal path length among candidates")
    p.add_argument("--seed", type=int, default=0, help="seed of the random encoder")
    p.add_argument("--json", help="write the ranking JSON here")

    p = subs["kball"]
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--mdp", help="tabular MDP JSON")
    src.add_argument("--grid", help="grid environment name or layout (its tabular view is used)")
    p.add_argument("--root", type=int, required=True, help="root state id")
    p.add_argument("--k", type=int, required=True, help="number of steps")

    p = subs["bisim"]
    p.add_argument("--m1", required=True, help="first tabular MDP JSON")
    p.add_argument("--m2", required=True, help="second tabular MDP JSON")
    p.add_argument("--k", type=int, default=None, help="compare the k-ball MDPs at --root1/--root2 instead")
    p.add_argument("--root1", type=int, default=0, help="root state in m1")
    p.add_argument("--root2", type=int, default=0, help="root state in m2")
    p.add_argument("--witness", action="store_true", help="print the witness relation")

    p = subs["env"]
    p.add_argument("action", choices=("render", "describe", "tabular"), help="what to print or export")
    p.add_argument("--env", default="rooms5", help="environment name or layout JSON")
    p.add_argument("--out", help="write to this file instead of stdout")

    parser.epilog = flag_summary(subs)
    return parser


def flag_summary(subs) -> str:
    lines = ["flags by command:"]
    for name, p in subs.items():
        flags = [s for a in p._actions for s in a.option_strings if s.startswith("--") and s != "--help"]
        lines.append(f"  {name}: " + " ".join(flags))
    return "\n".join(lines)


# -- helpers ----------------------------------------------------------------------------

def write_json(path, obj) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def write_metrics(path, records) -> None:
    keys = []
    for r in records:
        keys.extend(k for k in r if k not in keys)
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(keys)
        for r in records:
            w.writerow([repr(r[k]) if isinstance(r.get(k), float) else r.get(k, "") for k in keys])


def run_dir(cfg) -> str:
    out = cfg["out"]
    os.makedirs(os.path.join(out, "checkpoints"), exist_ok=True)
    write_json(os.path.join(out, "config.json"), cfg)
    return out


def resolve_args(args) -> dict:
    file_cfg = C.load_config_file(args.config) if getattr(args, "config", None) else None
    flags = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg:") and v is not None}
    return C.resolve(file_cfg, flags)


def build_dataset(cfg, env):
    d = cfg["data"]
    if d["path"]:
        ds = load_dataset(d["path"])
        recorded = ds.meta.get("env")
        if recorded is not None and recorded != env.descriptor():
            raise C.ValidationError("data.path", "dataset was generated for a different environment")
    else:
        ds = generate_dataset(env, d["episodes"], float(d["noise"]), cfg["seed"], d["horizon"])
    if d["coverage_keep"] < 1.0:
        ds = filter_coverage(ds, d["coverage_region"], float(d["coverage_keep"]), cfg["seed"])
    if d["imbalance_remove"] > 0.0:
        ds = filter_imbalance(ds, d["coverage_region"], d["imbalance_dir"], float(d["imbalance_remove"]), cfg["seed"])
    return ds


def load_encoder(path, state_dim: int, seed: int):
    """``embed(s, g)`` for a representation checkpoint, an agent checkpoint, or 'random'."""
    if path == "random":
        return random_encoder(state_dim, seed=seed)
    if os.path.exists(os.path.join(path, "agent.json")):
        agent = load_agent(path)
        if agent.encoder is None:
            raise ConfigurationError("agent checkpoint has no encoder")
        model = agent.encoder
    else:
        model = load_carl(path)
    if model.state_dim != state_dim:
        raise ConfigurationError(f"model expects {model.state_dim}-d states, environment has {state_dim}")
    return lambda s, g: embed_state_goal(model, s, g)


def _cell(text: str) -> np.ndarray:
    try:
        x, y = (int(v) for v in text.split(","))
    except ValueError:
        raise ConfigurationError(f"expected a cell 'x,y', got {text!r}") from None
    return np.array([x, y])


def _grid(env):
    if not isinstance(env, GridRoomsEnv):
        raise UnsupportedOperation("this command needs a grid environment")
    return env


# -- commands -------------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = resolve_args(args)
    env = env_from_descriptor(cfg["env"])
    out = cfg["out"]
    if out.endswith(".carlds"):
        path, cfg_path = out, out + ".config.json"
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    else:
        os.makedirs(out, exist_ok=True)
        path, cfg_path = os.path.join(out, "data.carlds"), os.path.join(out, "config.json")
    cfg = {**cfg, "data": {**cfg["data"], "path": None}}
    ds = build_dataset(cfg, env)
    save_dataset(ds, path)
    write_json(cfg_path, cfg)
    print(f"wrote {len(ds.trajectories)} trajectories ({ds.num_transitions} transitions) to {path}")
    return 0


def cmd_train_repr(args) -> int:
    cfg = resolve_args(args)
    env = env_from_descriptor(cfg["env"])
    ds = build_dataset(cfg, env)
    out = run_dir(cfg)
    t0 = time.perf_counter()
    model = train_carl(ds, None, C.carl_config(cfg), cfg["model"]["steps"], cfg["seed"])
    save_carl(model, os.path.join(out, "checkpoints", "repr"))
    write_metrics(os.path.join(out, "metrics.csv"), model.history)
    report = {
        "variant": model.config.variant,
        "steps": cfg["model"]["steps"],
        "num_transitions": ds.num_transitions,
        "final_loss": model.history[-1]["loss"] if model.history else None,
        "heldout_loss": evaluate_infonce(model, ds),
    }
    if isinstance(env, GridRoomsEnv):
        s, g, labels = cardinal_pairs(env)
        report["cluster"] = cluster_separation_embeddings(embed_state_goal(model, s, g), labels).to_dict()
    write_json(os.path.join(out, "report.json"), report)
    write_json(os.path.join(out, "timing.json"), {"runtime_s": time.perf_counter() - t0})
    print(f"held-out loss {report['heldout_loss']:.4f}; checkpoint in {out}/checkpoints/repr")
    return 0


def cmd_train_hrl(args) -> int:
    cfg = resolve_args(args)
    env = env_from_descriptor(cfg["env"])
    hcfg = C.hrl_config(cfg)
    ds = build_dataset(cfg, env)
    policy_ds = ds
    if cfg["hrl"]["train_rooms"] is not None:
        policy_ds = restrict_to_rooms(ds, _grid(env), cfg["hrl"]["train_rooms"])
        if not policy_ds.trajectories:
            raise C.ValidationError("hrl.train_rooms", "no trajectories start in these rooms")
    out = run_dir(cfg)
    t0 = time.perf_counter()
    encoder = None
    if hcfg.mode == "pretrain":
        if cfg["hrl"]["encoder"]:
            encoder = load_carl(cfg["hrl"]["encoder"])
        else:
            encoder = train_carl(ds, None, hcfg.carl, cfg["model"]["steps"], cfg["seed"])
    agent, history = train_agent(policy_ds, hcfg, cfg["seed"], cfg["hrl"]["steps"], encoder=encoder,
                                 encoder_dataset=ds, discrete=env.is_discrete)
    save_agent(agent, os.path.join(out, "checkpoints", "agent"))
    write_metrics(os.path.join(out, "metrics.csv"), history)
    report = {"train": history[-1] if history else {}, "num_transitions": policy_ds.num_transitions}
    if isinstance(env, GridRoomsEnv):
        e = cfg["eval"]
        rep = evaluate(agent, env, e["rooms"], e["episodes"], cfg["seed"], e["horizon"])
        report["eval"] = rep.to_dict(include_runtime=False)
        print(f"mean success {rep.mean_success:.3f}; rooms solved {rep.rooms_solved}/{rep.total_rooms}")
    write_json(os.path.join(out, "report.json"), report)
    write_json(os.path.join(out, "timing.json"), {"runtime_s": time.perf_counter() - t0})
    print(f"checkpoint in {out}/checkpoints/agent")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_args(args)
    env = _grid(env_from_descriptor(cfg["env"]))
    agent = load_agent(args.agent)
    if agent.state_dim != env.state_dim:
        raise ConfigurationError("agent and environment state dimensions differ")
    e = cfg["eval"]
    rep = evaluate(agent, env, e["rooms"], e["episodes"], cfg["seed"], e["horizon"])
    cfg = {**cfg, "agent": os.path.abspath(args.agent)}
    text = rep.to_json(include_runtime=False)
    if args.json:
        os.makedirs(os.path.dirname(os.path.abspath(args.json)), exist_ok=True)
        with open(args.json, "w", encoding="utf-8") as f:
            f.write(text)
        write_json(args.json + ".config.json", cfg)
    if getattr(args, "cfg:out") is not None:
        out = run_dir(cfg)
        with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as f:
            f.write(text)
        write_metrics(os.path.join(out, "metrics.csv"),
                      [{"room": r, "success": p, "ci95": rep.ci_halfwidth[r]} for r, p in rep.room_success.items()])
        write_json(os.path.join(out, "timing.json"), {"runtime_s": rep.runtime_s})
    for r, p in rep.room_success.items():
        print(f"room {r}: success {p:.3f} +- {rep.ci_halfwidth[r]:.3f}")
    print(f"rooms solved: {rep.rooms_solved}/{rep.total_rooms}")
    return 0


def read_pairs(path, state_dim: int):
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ConfigurationError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    s_cols = [i for i, h in enumerate(header) if h.startswith("s") and h[1:].isdigit()]
    g_cols = [i for i, h in enumerate(header) if h.startswith("g") and h[1:].isdigit()]
    if len(s_cols) != state_dim or len(g_cols) != state_dim:
        raise ConfigurationError(f"{path} needs {state_dim} s* and {state_dim} g* columns")
    s = np.array([[float(r[i]) for i in s_cols] for r in body], dtype=np.float32).reshape(-1, state_dim)
    g = np.array([[float(r[i]) for i in g_cols] for r in body], dtype=np.float32).reshape(-1, state_dim)
    labels = [r[0] for r in body]
    return s, g, labels


def cmd_embed(args) -> int:
    env = env_from_descriptor(args.env)
    embed = load_encoder(args.model, env.state_dim, args.seed)
    if args.pairs:
        s, g, labels = read_pairs(args.pairs, env.state_dim)
    else:
        s, g, labels = cardinal_pairs(_grid(env))
        labels = labels.tolist()
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    export_embeddings(None, s, g, labels, args.out, embed=embed)
    write_json(args.out + ".config.json", {"model": args.model, "pairs": args.pairs, "env": args.env,
                                           "seed": args.seed, "out": args.out})
    print(f"wrote {len(labels)} embeddings to {args.out}")
    if len(labels):
        try:
            rep = cluster_separation_embeddings(embed(s, g), labels)
            print(f"cluster margin {rep.margin:.4f} (within {rep.mean_within:.4f}, between {rep.between:.4f})")
        except ValueError:
            pass
    return 0


def cmd_nn_query(args) -> int:
    env = _grid(env_from_descriptor(args.env))
    embed = load_encoder(args.model, env.state_dim, args.seed)
    ref_s, ref_g = _cell(args.state), _cell(args.goal)
    if not (env.is_open(ref_s)[0] and env.is_open(ref_g)[0]):
        raise ConfigurationError("reference cells must be open cells of the environment")
    ids = np.arange(env.num_cells)
    dist = env.distances
    si, gi = np.nonzero((dist[ids][:, ids] >= 1) & (dist[ids][:, ids] <= args.max_dist))
    cand_s, cand_g = env.features(env.cells[si]), env.features(env.cells[gi])
    ranked = nearest_neighbors(None, (env.features(ref_s), env.features(ref_g)), (cand_s, cand_g), args.top_n,
                               args.bin_size, embed=embed)
    rows = [{"rank": n + 1, "index": i, "state": env.cells[si[i]].tolist(), "goal": env.cells[gi[i]].tolist(),
             "similarity": sim} for n, (i, sim) in enumerate(ranked)]
    for r in rows:
        print(f"{r['rank']}\t{tuple(r['state'])} -> {tuple(r['goal'])}\t{r['similarity']:.4f}")
    if args.json:
        write_json(args.json, rows)
        write_json(args.json + ".config.json", {k: v for k, v in vars(args).items() if k != "func"})
    return 0


def cmd_sweep(args) -> int:
    cfg = resolve_args(args)
    base = C.experiment_config(cfg)
    sw = cfg["sweep"]
    methods = {m: C.METHOD_PRESETS[m] for m in sw["methods"]}
    out = run_dir(cfg)
    t0 = time.perf_counter()
    rows = sweep(sw["axis"], sw["values"], base, sw["seeds"], methods)
    with open(os.path.join(out, "metrics.csv"), "w", encoding="utf-8") as f:
        f.write(table_csv(rows))
    text = table_text(rows)
    with open(os.path.join(out, "table.txt"), "w", encoding="utf-8") as f:
        f.write(text + "\n")
    write_json(os.path.join(out, "report.json"), {"rows": rows})
    write_json(os.path.join(out, "timing.json"), {"runtime_s": time.perf_counter() - t0})
    print(text)
    return 0


def _load_mdp(path) -> TabularMdp:
    try:
        return TabularMdp.load(path)
    except (KeyError, TypeError) as e:
        raise ConfigurationError(f"{path} is not a tabular MDP document ({e})") from None


def cmd_kball(args) -> int:
    mdp = _load_mdp(args.mdp) if args.mdp else to_tabular(env_from_descriptor(args.grid))
    ball = compute_k_ball(mdp, args.root, args.k)
    print("{" + ", ".join(str(s) for s in sorted(ball)) + "}")
    return 0


def cmd_bisim(args) -> int:
    m1, m2 = _load_mdp(args.m1), _load_mdp(args.m2)
    if args.k is not None:
        m1, m2 = build_k_ball_mdp(m1, args.root1, args.k), build_k_ball_mdp(m2, args.root2, args.k)
    ok, rel = check_dynamics_bisimilar(m1, m2)
    print(f"bisimilar: {'true' if ok else 'false'}")
    if ok and args.witness:
        for x, y in sorted(rel.pairs):
            print(f"{x} {y}")
    return 0


def cmd_env(args) -> int:
    env = env_from_descriptor(args.env)
    if args.action == "render":
        text = _grid(env).render() + "\n"
    elif args.action == "describe":
        text = json.dumps(env.descriptor(), indent=2, sort_keys=True) + "\n"
    else:
        text = json.dumps(to_tabular(env).to_dict()) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-repr": cmd_train_repr,
    "train-hrl": cmd_train_hrl,
    "eval": cmd_eval,
    "embed": cmd_embed,
    "nn-query": cmd_nn_query,
    "sweep": cmd_sweep,
    "kball": cmd_kball,
    "bisim": cmd_bisim,
    "env": cmd_env,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except C.ValidationError as e:
        print(f"error: invalid config field {e}", file=sys.stderr)
        return 1
    except (ValueError, TypeError, FloatingPointError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
