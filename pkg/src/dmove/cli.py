"""Batch entry points: problem generation, learning, solving, certification.

Exit status contract: 0 success, 1 usage error, 2 runtime error,
3 certification mismatch.

The run configuration is a single JSON file whose keys mirror the
experiment hyperparameter names (flows, lr, hidden, r_min, r_max, n_bins,
n, n_samples, t_inc, replay_buffer_size, steps), plus the problem source,
master seed, optional elimination order, and output directory.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .distributions import CdfGrid, ReturnDistribution
from .engine import dmove, export_esr_csv
from .environments import (
    DEFAULT_YAW_SET,
    SurrogateParams,
    SyntheticEnv,
    WindCondition,
    WindFarmEnv,
    grid_layout,
    provider_from_synthetic,
    random_synthetic_spec,
    read_layout,
    read_synthetic_spec,
    write_layout,
    write_synthetic_spec,
)
from .flow import Adam, FlowModel
from .graph import build_graph, enumerate_local_actions
from .learning import (
    LearnConfig,
    ReplayBuffer,
    _stream,
    build_provider,
    make_models,
    run_steps,
)
from .oracle import OracleLimitError, brute_force_esr_set, compare, enumerate_joint_returns
from .pruning import no_prune

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_MISMATCH = 3

CERT_MAX_BINS = 4096


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    """Parsed run configuration; see `load_config` for the file schema."""

    problem: dict
    steps: int = 300_000
    t_inc: int = 1_000
    n: int = 500
    n_samples: int = 2_000
    replay_buffer_size: int = 5_000_000
    batch_size: int = 256
    epochs_per_increment: int = 50
    flows: int = 8
    hidden: int = 30
    hidden_layers: int = 1
    lr: float = 1e-3
    r_min: list = field(default_factory=lambda: [-1.0, 0.0])
    r_max: list = field(default_factory=lambda: [0.0, 2.0e7])
    n_bins: int = 128
    cap: int | None = None
    seed: int = 0
    elimination_order: list | None = None
    out: str = "runs/out"

    def learn_config(self) -> LearnConfig:
        return LearnConfig(
            steps=self.steps,
            t_inc=self.t_inc,
            n=self.n,
            n_samples=self.n_samples,
            capacity=self.replay_buffer_size,
            batch_size=self.batch_size,
            epochs_per_increment=self.epochs_per_increment,
            seed=self.seed,
            flows=self.flows,
            hidden_units=self.hidden,
            hidden_layers=self.hidden_layers,
            lr=self.lr,
        )

    def grid(self) -> CdfGrid:
        return CdfGrid(tuple(self.r_min), tuple(self.r_max), self.n_bins)


def load_config(path, overrides=None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if "problem" not in doc:
        raise UsageError("config must name a problem source under the 'problem' key")
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(doc) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    cfg = RunConfig(**doc)
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, key, value)
    if len(cfg.r_min) != len(cfg.r_max):
        raise UsageError("r_min and r_max must have equal length")
    return cfg


def _resolve_problem(cfg: RunConfig, base: Path):
    """Return (env, graph, kind) for the configured problem source."""
    problem = cfg.problem
    if "layout" in problem:
        env = read_layout(base / problem["layout"])
        return env, env.graph, "farm"
    if "synthetic" in problem:
        env = read_synthetic_spec(base / problem["synthetic"])
        return env, env.graph, "synthetic"
    if "graph" in problem:
        g = problem["graph"]
        graph = build_graph(g["action_counts"], [set(s) for s in g["scopes"]])
        return None, graph, "graph"
    raise UsageError("problem must specify one of: layout, synthetic, graph")


def _check_objectives(cfg: RunConfig, env) -> None:
    dim = getattr(env, "reward_dim", None)
    if dim is not None and dim != len(cfg.r_min):
        raise UsageError(
            f"grid bounds have {len(cfg.r_min)} objectives but the problem has {dim}"
        )


# -- gen ---------------------------------------------------------------------


def _parse_spacing(text: str) -> tuple[float, float]:
    try:
        dx, dy = (float(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise UsageError(f"spacing must look like '500x400', got {text!r}") from exc
    if dx <= 0 or dy <= 0:
        raise UsageError(f"spacing must be positive, got {text!r}")
    return dx, dy


def _parse_wind(text: str) -> WindCondition:
    try:
        direction, speed = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise UsageError(f"wind must look like '30:11', got {text!r}") from exc
    if speed <= 0:
        raise UsageError(f"wind speed must be positive, got {speed}")
    return WindCondition(direction, speed)


def _parse_kv(pairs) -> dict:
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise UsageError(f"expected key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key] = value
    return out


def cmd_gen(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.farm is not None:
        if args.farm < 1:
            raise UsageError("--farm needs at least one turbine")
        spacing = _parse_spacing(args.spacing)
        wind = _parse_wind(args.wind)
        turbines = grid_layout(args.farm, spacing)
        write_layout(out, turbines, wind, SurrogateParams(), yaw_set=DEFAULT_YAW_SET,
                     seed=args.seed)
        env = read_layout(out)  # validates geometry round-trips
        print(f"wrote {out}: {args.farm} turbines, {len(env.graph.scopes)} factors")
        return EXIT_OK

    kv = _parse_kv(args.synthetic)
    try:
        agents = int(kv.pop("agents"))
        actions = int(kv.pop("actions"))
    except KeyError as exc:
        raise UsageError(f"--synthetic requires {exc} (e.g. agents=3 actions=2)") from exc
    seed = int(kv.pop("seed", args.seed))
    if kv:
        raise UsageError(f"unknown --synthetic keys: {sorted(kv)}")
    if agents < 1 or actions < 1:
        raise UsageError("agents and actions must be positive")
    scopes = [{i, i + 1} for i in range(agents - 1)] or [{0}]
    graph = build_graph([actions] * agents, scopes)
    spec = random_synthetic_spec(graph, seed=seed)
    write_synthetic_spec(out, graph, spec, seed=seed)
    print(f"wrote {out}: {agents} agents, {len(graph.scopes)} factors")
    return EXIT_OK


# -- learn -------------------------------------------------------------------


def _buffer_path(out: Path, fid: int) -> Path:
    return out / f"buffer_{fid}.npz"


def _checkpoint_path(out: Path, fid: int) -> Path:
    return out / f"model_{fid}.npz"


def _save_buffers(out: Path, buffers: dict) -> dict:
    paths = {}
    for fid, buf in buffers.items():
        entries = buf.entries()
        rewards = np.stack([r for r, _ in entries]) if entries else np.zeros((0, buf.dim))
        actions = (
            np.array([a for _, a in entries], dtype=np.int64)
            if entries
            else np.zeros((0, 0), dtype=np.int64)
        )
        path = _buffer_path(out, fid)
        np.savez(path, rewards=rewards, actions=actions,
                 capacity=np.array(buf.capacity), dim=np.array(buf.dim))
        paths[str(fid)] = path.name
    return paths


def _load_buffers(out: Path, manifest: dict) -> dict:
    buffers = {}
    for fid_str, name in manifest["buffers"].items():
        with np.load(out / name) as data:
            buf = ReplayBuffer(int(data["capacity"]), int(data["dim"]))
            for r, a in zip(data["rewards"], data["actions"]):
                buf.push(r, tuple(int(v) for v in a))
        buffers[int(fid_str)] = buf
    return buffers


def cmd_learn(args) -> int:
    if args.resume:
        manifest_path = Path(args.resume)
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        cfg = load_config(manifest_path.parent / manifest["config_file"],
                          overrides={"seed": args.seed, "out": args.out})
        base = (manifest_path.parent / manifest["config_file"]).parent
        start_step = manifest["steps_done"] + 1
    else:
        cfg = load_config(args.config, overrides={"seed": args.seed, "out": args.out})
        base = Path(args.config).parent
        manifest = None
        start_step = 1

    env, graph, kind = _resolve_problem(cfg, base)
    if env is None:
        raise UsageError("learning needs an executable problem (layout or synthetic)")
    _check_objectives(cfg, env)
    lcfg = cfg.learn_config()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    if manifest is not None:
        models = {
            int(fid): FlowModel.load(manifest_path.parent / name)
            for fid, name in manifest["checkpoints"].items()
        }
        buffers = _load_buffers(manifest_path.parent, manifest)
        env.set_rng_state(manifest["env_rng_state"])
        if start_step > lcfg.steps:
            print(f"nothing to do: {manifest['steps_done']} steps already completed")
    else:
        models = make_models(graph, lcfg, env.reward_dim)
        buffers = {s.factor_id: ReplayBuffer(lcfg.capacity, env.reward_dim)
                   for s in graph.scopes}

    opts = {fid: Adam(models[fid].parameters(), lr=lcfg.lr) for fid in models}
    increments = run_steps(env, graph, lcfg, models, buffers, opts, start_step=start_step)
    if increments == 0 and start_step <= lcfg.steps:
        warnings.warn("no training increments ran (steps < t_inc)", RuntimeWarning)

    checkpoints = {}
    for fid, model in models.items():
        path = _checkpoint_path(out, fid)
        model.save(path)
        checkpoints[str(fid)] = path.name
    buffer_paths = _save_buffers(out, buffers)

    config_file = out / "config.json"
    with open(config_file, "w", encoding="utf-8") as fh:
        doc = {k: getattr(cfg, k) for k in RunConfig.__dataclass_fields__}
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")

    manifest_doc = {
        "version": 1,
        "config_file": config_file.name,
        "steps_done": max(lcfg.steps, start_step - 1),
        "seed": lcfg.seed,
        "checkpoints": checkpoints,
        "buffers": buffer_paths,
        "env_rng_state": env.rng_state(),
        "problem_kind": kind,
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest_doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(checkpoints)} checkpoints and manifest to {out}")
    return EXIT_OK


# -- solve ---------------------------------------------------------------------


def _dump_distributions(out, solution, models, buffers, graph, cfg, kind) -> list:
    """Per-member, per-factor dumps: learned samples next to buffer samples."""
    names = (
        ["power", "turbulence"] if kind == "farm" else
        [f"obj{j}" for j in range(len(cfg.r_min))]
    )
    cols = [f"learned_dist_{c}" for c in names] + [f"sampled_dist_{c}" for c in names]
    ranks = {
        s.factor_id: {la: r for r, la in enumerate(enumerate_local_actions(graph, s.agents))}
        for s in graph.scopes
    }
    written = []
    for mi, member in enumerate(solution.members, start=1):
        for scope in graph.scopes:
            fid = scope.factor_id
            local = tuple(member.joint_action[a] for a in scope.agents)
            matching = [r for r, a in buffers[fid].entries() if a == local]
            if not matching:
                warnings.warn(f"no buffer samples for factor {fid} action {local}; skipping dump",
                              RuntimeWarning)
                continue
            k = min(cfg.n, len(matching))
            model = models[fid]
            learned = model.sample(
                np.eye(model.cond_dim)[ranks[fid][local]], k,
                seed=_stream(cfg.seed, 6, mi, fid),
            ).samples
            rng = np.random.default_rng(_stream(cfg.seed, 7, mi, fid))
            pick = rng.choice(len(matching), size=k, replace=False)
            sampled = np.stack([matching[i] for i in pick])
            # farm column order is power then turbulence (objectives 1 then 0)
            order = [1, 0] if kind == "farm" else list(range(len(names)))
            rows = np.hstack([learned[:, order], sampled[:, order]])
            path = Path(out) / f"dist_member{mi}_factor{fid}.csv"
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(",".join(cols) + "\n")
                for row in rows:
                    fh.write(",".join(repr(float(v)) for v in row) + "\n")
            written.append(path)
    return written


def cmd_solve(args) -> int:
    manifest_path = Path(args.manifest)
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    cfg = load_config(manifest_path.parent / manifest["config_file"],
                      overrides={"seed": args.seed, "out": args.out})
    if args.bins is not None:
        cfg.n_bins = args.bins
    if args.cap is not None:
        cfg.cap = None if args.cap <= 0 else args.cap
    if args.order is not None:
        cfg.elimination_order = [int(v) for v in args.order.split(",")]

    base = (manifest_path.parent / manifest["config_file"]).parent
    env, graph, kind = _resolve_problem(cfg, base)
    models = {}
    for fid_str, name in manifest["checkpoints"].items():
        models[int(fid_str)] = FlowModel.load(manifest_path.parent / name)
    missing = {s.factor_id for s in graph.scopes} - set(models)
    if missing:
        raise UsageError(f"manifest is missing checkpoints for factors {sorted(missing)}")

    provider = build_provider(models, graph, cfg.n, cfg.seed)
    pruner = no_prune if args.no_prune else None
    kwargs = {} if pruner is None else {"prune1": pruner, "prune2": pruner, "prune3": pruner}
    solution = dmove(
        graph,
        provider,
        cfg.grid(),
        q=cfg.elimination_order,
        cap=cfg.n if cfg.cap is None else cfg.cap,
        seed=_stream(cfg.seed, 5),
        **kwargs,
    )
    assert len(solution) >= 1

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    esr_path = out / "esr_set.csv"
    n_agents = len(graph.action_counts)
    if kind == "farm":
        solution_for_export = _reorder_farm(solution)
        export_esr_csv(
            solution_for_export,
            esr_path,
            action_names=[f"yaw_{i}" for i in range(n_agents)],
            objective_names=["power", "turbulence"],
        )
    else:
        export_esr_csv(solution, esr_path)
    print(f"wrote {esr_path} with {len(solution)} members")

    if args.dump_distributions:
        buffers = _load_buffers(manifest_path.parent, manifest)
        written = _dump_distributions(out, solution, models, buffers, graph, cfg, kind)
        print(f"wrote {len(written)} distribution dumps")
    return EXIT_OK


def _reorder_farm(solution):
    """Swap expected-value columns to the farm export order (power, turbulence)."""
    from .engine import EsrMember, EsrSolution

    members = [
        EsrMember(m.joint_action, m.dist, m.expected[[1, 0]]) for m in solution.members
    ]
    return EsrSolution(members, solution.grid)


# -- certify -------------------------------------------------------------------


def _exact_grid(tables: dict, dim: int) -> CdfGrid:
    """Unit integer lattice wide enough to cover every partial sum of the tables.

    Per-factor minima/maxima are summed (clamped through zero) so any sum
    over any subset of factors stays inside the box; on integer-valued
    supports this makes grid dominance agree with dominance everywhere.
    """
    per_factor_min = {}
    per_factor_max = {}
    for (fid, _), dist in tables.items():
        lo = dist.samples.min(axis=0)
        hi = dist.samples.max(axis=0)
        per_factor_min[fid] = np.minimum(per_factor_min.get(fid, lo), lo)
        per_factor_max[fid] = np.maximum(per_factor_max.get(fid, hi), hi)
    lo = sum(np.minimum(v, 0.0) for v in per_factor_min.values())
    hi = sum(np.maximum(v, 0.0) for v in per_factor_max.values())
    lo = np.floor(lo) - 1
    hi = np.ceil(hi) + 1
    n_bins = int((hi - lo).max()) + 1
    if n_bins > CERT_MAX_BINS:
        raise OracleLimitError(
            f"certification lattice would need {n_bins} bins per dimension "
            f"(max {CERT_MAX_BINS}); use a synthetic instance with small return values"
        )
    r_max = lo + (n_bins - 1)
    return CdfGrid(tuple(lo), tuple(r_max), n_bins)


def cmd_certify(args) -> int:
    cfg = load_config(args.config, overrides={"seed": args.seed})
    base = Path(args.config).parent
    env, graph, kind = _resolve_problem(cfg, base)
    if kind == "farm":
        raise UsageError(
            "certification runs on synthetic or inline-graph problems; "
            "the farm surrogate has no exact oracle"
        )

    if kind == "synthetic":
        provider = provider_from_synthetic(
            env, m=args.cert_samples, seed=cfg.seed, quantize=not args.no_quantize
        )
    else:
        rng = np.random.default_rng(_stream(cfg.seed, 8))
        tables = {}
        for scope in graph.scopes:
            for la in enumerate_local_actions(graph, scope.agents):
                tables[(scope.factor_id, la)] = ReturnDistribution(
                    rng.integers(0, 8, size=(1, len(cfg.r_min))).astype(float)
                )
        provider = lambda fid, la: tables[(fid, tuple(la))]

    tables = {
        (s.factor_id, la): provider(s.factor_id, la)
        for s in graph.scopes
        for la in enumerate_local_actions(graph, s.agents)
    }
    grid = _exact_grid(tables, len(cfg.r_min))

    joint = enumerate_joint_returns(graph, provider, limit=args.limit)
    oracle_solution = brute_force_esr_set(joint, grid)
    solver_solution = dmove(graph, provider, grid, q=cfg.elimination_order, cap=None)
    report = compare(solver_solution, oracle_solution, grid)
    print(report.to_text())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "certification.txt", "w", encoding="utf-8") as fh:
            fh.write(report.to_text() + "\n")
    return EXIT_OK if report.exact else EXIT_MISMATCH


# -- entry point -----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="dmove", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="write a layout or synthetic problem file")
    group = gen.add_mutually_exclusive_group(required=True)
    group.add_argument("--farm", type=int, help="number of turbines in a grid layout")
    group.add_argument("--synthetic", nargs="+", metavar="KEY=VALUE",
                       help="synthetic spec, e.g. agents=3 actions=2")
    gen.add_argument("--spacing", default="500x400", help="grid spacing metres, e.g. 500x400")
    gen.add_argument("--wind", default="30:11", help="direction:speed, e.g. 30:11")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="output file path")

    learn = sub.add_parser("learn", help="collect experience and train the density models")
    learn.add_argument("--config", help="run configuration JSON")
    learn.add_argument("--resume", help="manifest.json of a previous run to continue")
    learn.add_argument("--seed", type=int, default=None)
    learn.add_argument("--out", default=None)

    solve = sub.add_parser("solve", help="run the solver on trained checkpoints")
    solve.add_argument("--manifest", required=True, help="manifest.json from learn")
    solve.add_argument("--seed", type=int, default=None)
    solve.add_argument("--out", default=None)
    solve.add_argument("--order", default=None, help="comma-separated elimination order")
    solve.add_argument("--cap", type=int, default=None, help="convolution cap (<=0 disables)")
    solve.add_argument("--bins", type=int, default=None, help="grid points per dimension")
    solve.add_argument("--dump-distributions", action="store_true")
    solve.add_argument("--no-prune", action="store_true",
                       help="oracle mode: keep every joint action")

    certify = sub.add_parser("certify", help="compare the solver against the exhaustive oracle")
    certify.add_argument("--config", required=True)
    certify.add_argument("--seed", type=int, default=None)
    certify.add_argument("--out", default=None)
    certify.add_argument("--limit", type=int, default=1_000_000)
    certify.add_argument("--cert-samples", type=int, default=8,
                         help="samples per frozen provider distribution")
    certify.add_argument("--no-quantize", action="store_true",
                         help="skip integer quantization of provider samples")

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "gen":
            return cmd_gen(args)
        if args.command == "learn":
            if not args.config and not args.resume:
                raise UsageError("learn needs --config or --resume")
            return cmd_learn(args)
        if args.command == "solve":
            return cmd_solve(args)
        if args.command == "certify":
            return cmd_certify(args)
        raise UsageError(f"unknown command {args.command}")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OracleLimitError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
