import csv
import hashlib
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .config.config import ExperimentConfig, resolve_out_dir, settings
from .constants.constants import FIGURE_CSV_COLUMNS, SWEEP_CSV_COLUMNS
from .dataset_gen import dataset_steps_for, generate
from .ddpm import make_schedule
from .errors import EmptyReportError, ShapeMismatchError, StaleReferenceError
from .i2sb import make_bridge_schedule
from .maze import (
    MazeSpec,
    compute_reference_scores,
    episode_task,
    expert_action,
    initial_state,
    make_maze,
    maze_to_ascii,
    normalized_score,
    random_action,
    rollout,
)
from .models import GenConfig, PlanDump, PlanRequest, ReferenceScores, SweepReport, SweepRow, TrainReport
from .networks import build_denoiser, build_prior_network, save_network
from .planner import PlannerModel, execute, load_planner_model, plan_batch, save_plan_dump, timed_plan
from .preprocessors.storage import Storage, atomic_write_text, connect_to_storage
from .priors import PriorKind
from .seeding import numpy_rng, torch_generator
from .training import (
    make_trainer_from_config,
    prior_mse,
    split_holdout,
    straight_line_mse,
    train_denoiser,
    train_prior_network,
)
from .trajectory import Dataset, Trajectory, load_dataset, save_dataset

logger = logging.getLogger(__name__)

EVAL_CHUNK = 50
FIGURES = ("score_training", "ddpm_nfe", "sb_nfe", "prior", "sb_priors_nfe_1")


def open_store(config: ExperimentConfig) -> Storage:
    return connect_to_storage(resolve_out_dir(config, settings))


# Naming
def dataset_total_steps(config: ExperimentConfig, training_steps: int) -> int:
    if config.dataset_steps is not None:
        return config.dataset_steps
    return dataset_steps_for(training_steps, config.batch_size, config.horizon, config.max_dataset_steps)


def dataset_path(store: Storage, config: ExperimentConfig, training_steps: int) -> Path:
    total = dataset_total_steps(config, training_steps)
    return store.datasets_dir / f"{config.maze_id}_h{config.horizon}_n{total}_s{config.dataset_seed}.sbd"


def denoiser_checkpoint_name(config: ExperimentConfig, engine: str, n_steps: int, training_steps: int,
                             seed: int, prior: str = "gaussian") -> str:
    if engine == "ddpm":
        return f"ddpm_{config.maze_id}_N{n_steps}_ts{training_steps}_seed{seed}.safetensors"
    return f"i2sb_{config.maze_id}_{prior}_N{n_steps}_ts{training_steps}_seed{seed}.safetensors"


def prior_checkpoint_name(config: ExperimentConfig, training_steps: int, seed: int) -> str:
    return f"prior_{config.maze_id}_ts{training_steps}_seed{seed}.safetensors"


def layout_hash(spec: MazeSpec) -> str:
    return hashlib.sha256(f"{maze_to_ascii(spec)}|{spec.episode_cap}".encode("utf-8")).hexdigest()


# gen-data
def cmd_gen_data(config: ExperimentConfig) -> List[Path]:
    """One dataset file per distinct dataset size the training sweep needs"""
    store = open_store(config)
    paths = []
    for ts in sorted(set(config.training_steps)):
        path = dataset_path(store, config, ts)
        if path in paths:
            continue
        cfg = GenConfig(
            maze_id=config.maze_id,
            total_steps=dataset_total_steps(config, ts),
            horizon=config.horizon,
            seed=config.dataset_seed,
        )
        paths.append(save_dataset(generate(cfg), path))
    return paths


# train
def _load_training_dataset(store: Storage, config: ExperimentConfig, training_steps: int) -> Dataset:
    path = dataset_path(store, config, training_steps)
    if not path.exists():
        raise FileNotFoundError(f"dataset {path} missing; run gen-data first")
    ds = load_dataset(path)
    if ds.horizon != config.horizon or ds.maze_id != config.maze_id:
        raise ShapeMismatchError(
            f"dataset {path.name} is {ds.maze_id}/h{ds.horizon}, config wants {config.maze_id}/h{config.horizon}"
        )
    return ds


def _write_loss_csv(path: Path, losses: Sequence[float]) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", "loss"])
    for i, loss in enumerate(losses, start=1):
        writer.writerow([i, repr(float(loss))])
    return atomic_write_text(path, buf.getvalue())


def _stats_header(ds: Dataset) -> Dict:
    return {"mins": ds.stats.mins.tolist(), "maxs": ds.stats.maxs.tolist()}


def _train_prior(store: Storage, config: ExperimentConfig, ds: Dataset, ts: int, seed: int):
    train_ds, holdout_ds = split_holdout(ds, seed=seed)
    pnet = build_prior_network(config.horizon, ds.transition_dim, seed=seed)
    untrained = prior_mse(pnet, holdout_ds)
    trainer = make_trainer_from_config(pnet, config, seed)
    log = train_prior_network(pnet, train_ds, ts, config.batch_size, trainer, progress=True)
    holdout = prior_mse(pnet, holdout_ds)
    line = straight_line_mse(holdout_ds)
    logger.info(f"Learned prior holdout MSE {holdout:.4f} (untrained {untrained:.4f}, straight line {line:.4f})")

    name = prior_checkpoint_name(config, ts, seed)
    save_network(store.checkpoints_dir / name, pnet, {
        "maze_id": config.maze_id,
        "training_steps": ts,
        "seed": seed,
        "holdout_mse": holdout,
        "untrained_holdout_mse": untrained,
        "straight_line_holdout_mse": line,
    })
    _write_loss_csv(store.losses_dir / name.replace(".safetensors", ".csv"), log.losses)
    return pnet, name


def _train_one(store: Storage, config: ExperimentConfig, ds: Dataset, engine: str, n_steps: int, ts: int,
               seed: int, prior: PriorKind, prior_net=None, prior_name: Optional[str] = None) -> TrainReport:
    net = build_denoiser(config.horizon, ds.transition_dim, seed=seed)
    sched = make_schedule(n_steps, config.ddpm_schedule) if engine == "ddpm" else make_bridge_schedule(n_steps)
    trainer = make_trainer_from_config(net, config, seed)
    log = train_denoiser(engine, net, sched, ds, ts, config.batch_size, trainer, prior, prior_net, progress=True)

    name = denoiser_checkpoint_name(config, engine, n_steps, ts, seed, prior.tag)
    meta = {
        "engine": engine,
        "n_steps": n_steps,
        "schedule": config.ddpm_schedule if engine == "ddpm" else "bridge",
        "maze_id": config.maze_id,
        "prior": prior.tag if engine == "i2sb" else "gaussian",
        "training_steps": ts,
        "seed": seed,
        "stats": _stats_header(ds),
    }
    if prior_name is not None:
        meta["prior_checkpoint"] = prior_name
    path = save_network(store.checkpoints_dir / name, net, meta)
    _write_loss_csv(store.losses_dir / name.replace(".safetensors", ".csv"), log.losses)
    return TrainReport(
        checkpoint=str(path),
        engine=engine,
        n_steps=n_steps,
        training_steps=ts,
        seed=seed,
        initial_loss=log.initial_loss,
        final_loss=log.final_loss,
        skipped_steps=log.skipped,
    )


def cmd_train(config: ExperimentConfig) -> List[TrainReport]:
    """
    Train every model the sweep needs: one DDPM per N and one bridge model
    per prior, for each training-steps value and seed
    Returns:
        One TrainReport per denoiser checkpoint written
    """
    store = open_store(config)
    reports = []
    for ts in config.training_steps:
        ds = _load_training_dataset(store, config, ts)
        for seed in config.seeds:
            if "ddpm" in config.engines:
                for n_steps in config.ddpm_n_steps:
                    reports.append(_train_one(store, config, ds, "ddpm", n_steps, ts, seed, PriorKind("gaussian")))
            if "i2sb" in config.engines:
                for text in config.priors:
                    prior = PriorKind.parse(text)
                    prior_net, prior_name = None, None
                    if prior.tag == "learned":
                        prior_net, prior_name = _train_prior(store, config, ds, ts, seed)
                    reports.append(_train_one(
                        store, config, ds, "i2sb", config.n_steps, ts, seed, prior, prior_net, prior_name
                    ))
    return reports


# refs
def reference_path(store: Storage, config: ExperimentConfig, spec: MazeSpec) -> Path:
    return store.refs_dir / (
        f"{spec.id}_cap{spec.episode_cap}_seed{config.reference_seed}_ep{config.reference_episodes}.json"
    )


def cmd_refs(config: ExperimentConfig) -> ReferenceScores:
    """
    Reference scores from the cache, computing them on first use
    Raises:
        StaleReferenceError: cached entry no longer matches the maze layout or request
    """
    store = open_store(config)
    spec = make_maze(config.maze_id)
    path = reference_path(store, config, spec)
    expected = {
        "maze_id": spec.id,
        "episode_cap": spec.episode_cap,
        "seed": config.reference_seed,
        "episodes": config.reference_episodes,
        "layout_hash": layout_hash(spec),
    }
    if path.exists():
        refs = ReferenceScores.model_validate_json(path.read_text())
        stale = {k: v for k, v in expected.items() if getattr(refs, k) != v}
        if stale:
            raise StaleReferenceError(f"cached references {path.name} disagree on {sorted(stale)}")
        logger.info(f"Using cached references {path.name}")
        return refs
    random_ref, expert_ref = compute_reference_scores(spec, config.reference_episodes, config.reference_seed)
    refs = ReferenceScores(**expected, random_ref=random_ref, expert_ref=expert_ref)
    atomic_write_text(path, refs.model_dump_json(indent=2))
    return refs


# eval
def _execute_plan(args: Tuple[str, np.ndarray, np.ndarray]) -> float:
    maze_id, raw, goal = args
    return execute(make_maze(maze_id), Trajectory(raw), goal).total_reward


def _execute_all(maze_id: str, plans: np.ndarray, goals: np.ndarray) -> List[float]:
    jobs = [(maze_id, p, g) for p, g in zip(plans, goals)]
    if settings.workers > 1:
        with ProcessPoolExecutor(max_workers=settings.workers) as pool:
            return list(pool.map(_execute_plan, jobs, chunksize=8))
    return [_execute_plan(job) for job in jobs]


def _tasks(spec: MazeSpec, config: ExperimentConfig) -> Tuple[np.ndarray, np.ndarray]:
    pairs = [episode_task(spec, config.reference_seed, i) for i in range(config.episodes)]
    starts = np.stack([np.concatenate([s, np.zeros(2)]) for s, _ in pairs])
    goals = np.stack([g for _, g in pairs])
    return starts, goals


def evaluate_model(model: PlannerModel, spec: MazeSpec, config: ExperimentConfig, nfe: int,
                   seed: int) -> Tuple[List[float], float]:
    """
    Plan and execute every evaluation episode with one model
    Returns:
        (episode rewards, mean planning seconds per episode)
    """
    starts, goals = _tasks(spec, config)
    rewards, seconds = [], 0.0
    for lo in range(0, len(starts), EVAL_CHUNK):
        hi = min(lo + EVAL_CHUNK, len(starts))
        generators = [torch_generator(seed, i) for i in range(lo, hi)]
        t0 = time.perf_counter()
        plans, out = plan_batch(model, starts[lo:hi], goals[lo:hi], nfe, generators)
        seconds += time.perf_counter() - t0
        if out.nfe != nfe:
            raise RuntimeError(f"sampler used {out.nfe} network evaluations, expected {nfe}")
        rewards.extend(_execute_all(spec.id, plans, goals[lo:hi]))
    return rewards, seconds / max(len(starts), 1)


def policy_rewards(spec: MazeSpec, config: ExperimentConfig, policy: str) -> List[float]:
    """
    Episode rewards of the expert or uniform-random policy on the evaluation tasks.
    Both replay the reference streams, so with episodes == reference_episodes
    they score exactly 100 and 0 whatever the evaluation seeds are.
    """
    rewards = []
    for i in range(config.episodes):
        start, goal = episode_task(spec, config.reference_seed, i)
        if policy == "expert":
            act = expert_action
        else:
            rng = numpy_rng(config.reference_seed, i, 1)
            act = lambda _spec, _s, rng=rng: random_action(rng)  # noqa: E731
        result, _ = rollout(spec, initial_state(start, goal), act)
        rewards.append(result.total_reward)
    return rewards


def _aggregate(scores: List[float]) -> Tuple[float, float]:
    arr = np.asarray(scores, dtype=np.float64)
    stderr = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
    return float(arr.mean()), stderr


def _grid(config: ExperimentConfig) -> Iterable[Tuple[str, str, int, int, int]]:
    """(engine, prior, N, nfe, training_steps) for every evaluated model"""
    for ts in config.training_steps:
        if "ddpm" in config.engines:
            for n_steps in config.ddpm_n_steps:
                yield "ddpm", "gaussian", n_steps, n_steps, ts
        if "i2sb" in config.engines:
            for prior in config.priors:
                for nfe in config.nfe_list:
                    yield "i2sb", PriorKind.parse(prior).tag, config.n_steps, nfe, ts


def cmd_eval(config: ExperimentConfig) -> SweepReport:
    """
    Score every grid point against the cached references and write the sweep report
    Returns:
        SweepReport with one row per configuration aggregated over seeds
    """
    store = open_store(config)
    spec = make_maze(config.maze_id)
    refs = cmd_refs(config)
    report = SweepReport(
        maze_id=config.maze_id, horizon=config.horizon, random_ref=refs.random_ref, expert_ref=refs.expert_ref
    )

    def score(rewards: List[float]) -> List[float]:
        return [normalized_score(r, refs.random_ref, refs.expert_ref) for r in rewards]

    for policy in ("expert", "random"):
        mean, stderr = _aggregate(score(policy_rewards(spec, config, policy)))
        report.rows.append(SweepRow(
            engine=policy, prior="none", n_steps=0, nfe=0, training_steps=0, mean_score=mean, stderr=stderr,
            episodes=config.episodes, seeds=1,
        ))

    models: Dict[str, PlannerModel] = {}
    for engine, prior, n_steps, nfe, ts in tqdm(list(_grid(config)), desc="eval"):
        scores, seconds = [], []
        for seed in config.seeds:
            name = denoiser_checkpoint_name(config, engine, n_steps, ts, seed, prior)
            if name not in models:
                models[name] = load_planner_model(store.checkpoints_dir / name)
            rewards, plan_seconds = evaluate_model(models[name], spec, config, nfe, seed)
            scores.extend(score(rewards))
            seconds.append(plan_seconds)
        mean, stderr = _aggregate(scores)
        row = SweepRow(
            engine=engine, prior=prior, n_steps=n_steps, nfe=nfe, training_steps=ts, mean_score=mean,
            stderr=stderr, episodes=config.episodes, seeds=len(config.seeds), plan_seconds=float(np.mean(seconds)),
        )
        logger.info(f"{engine}/{prior} N={n_steps} nfe={nfe} ts={ts}: {mean:.1f} +- {stderr:.1f}")
        report.rows.append(row)

    write_report(store, report)
    return report


def report_csv(report: SweepReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_CSV_COLUMNS)
    for row in report.rows:
        writer.writerow([getattr(row, col) for col in SWEEP_CSV_COLUMNS])
    return buf.getvalue()


def write_report(store: Storage, report: SweepReport) -> Tuple[Path, Path]:
    stem = store.reports_dir / f"sweep_{report.maze_id}"
    csv_path = atomic_write_text(stem.with_suffix(".csv"), report_csv(report))
    json_path = atomic_write_text(stem.with_suffix(".json"), report.model_dump_json(indent=2))
    logger.info(f"Wrote sweep report {csv_path} ({len(report.rows)} rows)")
    return csv_path, json_path


def load_report(path: Path) -> SweepReport:
    return SweepReport.model_validate_json(Path(path).read_text())


# plan
def cmd_plan(config: ExperimentConfig, start_state: Sequence[float], goal_position: Sequence[float],
             engine: str = "i2sb", prior: str = "straight_line", nfe: Optional[int] = None, seed: int = 0,
             checkpoint: Optional[Path] = None) -> PlanDump:
    """Plan one task with a trained checkpoint and write the plan dump"""
    store = open_store(config)
    prior_tag = PriorKind.parse(prior).tag
    if nfe is None:
        nfe = config.n_steps if engine == "i2sb" else config.ddpm_n_steps[-1]
    if checkpoint is None:
        n_steps = nfe if engine == "ddpm" else config.n_steps
        ts = max(config.training_steps)
        checkpoint = store.checkpoints_dir / denoiser_checkpoint_name(
            config, engine, n_steps, ts, config.seeds[0], prior_tag
        )
    model = load_planner_model(Path(checkpoint))
    req = PlanRequest(
        maze_id=model.maze_id,
        start_state=list(start_state),
        goal_position=list(goal_position),
        engine=engine,
        prior=prior,
        nfe=nfe,
        seed=seed,
    )
    _, dump = timed_plan(req, model)
    save_plan_dump(store.plans_dir / f"plan_{model.maze_id}_{engine}_{prior_tag}_nfe{nfe}_seed{seed}.json", dump)
    return dump


# plot-data
def _figure_rows(report: SweepReport, figure: str) -> List[Tuple[int, str, float, float]]:
    """(x, series, mean, stderr) points of one figure analogue"""
    learned = [r for r in report.rows if r.engine in ("ddpm", "i2sb")]
    if not learned:
        return []
    max_ts = max(r.training_steps for r in learned)
    max_n = max((r.n_steps for r in learned if r.engine == "i2sb"), default=None)
    points = []
    for r in learned:
        if figure == "score_training":
            # both engines from noise at equal NFE
            if r.prior == "gaussian" and r.nfe == r.n_steps and r.n_steps == (max_n or r.n_steps):
                points.append((r.training_steps, r.engine, r.mean_score, r.stderr))
        elif figure == "ddpm_nfe":
            if r.engine == "ddpm" and r.training_steps == max_ts:
                points.append((r.nfe, "ddpm", r.mean_score, r.stderr))
        elif figure == "sb_nfe":
            if r.engine == "i2sb" and r.prior == "straight_line" and r.training_steps == max_ts:
                points.append((r.nfe, "i2sb", r.mean_score, r.stderr))
        elif figure == "prior":
            if r.engine == "i2sb" and r.nfe == r.n_steps:
                points.append((r.training_steps, r.prior, r.mean_score, r.stderr))
        elif figure == "sb_priors_nfe_1":
            if r.nfe == 1:
                points.append((r.training_steps, f"{r.engine}:{r.prior}", r.mean_score, r.stderr))
        else:
            raise ValueError(f"unknown figure {figure!r}; expected one of {FIGURES}")
    return sorted(points, key=lambda p: (p[1], p[0]))


def cmd_plot_data(report: SweepReport, out_dir: Path, figures: Optional[Sequence[str]] = None) -> Dict[str, Path]:
    """
    Write one tidy CSV per figure analogue
    Args:
        report: sweep report to slice
        out_dir: directory for the CSV files
        figures: subset to write; an explicitly requested empty figure is an error
    Returns:
        figure name -> CSV path
    """
    if not report.rows:
        raise EmptyReportError("sweep report has no rows")
    requested = figures is not None
    written = {}
    for figure in (figures or FIGURES):
        points = _figure_rows(report, figure)
        if not points:
            if requested:
                raise EmptyReportError(f"figure {figure!r} selects no rows from the report")
            logger.warning(f"Figure {figure} has no rows; skipped")
            continue
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(FIGURE_CSV_COLUMNS)
        writer.writerows(points)
        written[figure] = atomic_write_text(Path(out_dir) / f"{figure}.csv", buf.getvalue())
    if not written:
        raise EmptyReportError("no figure selects any rows from the report")
    logger.info(f"Wrote {len(written)} figure files to {out_dir}")
    return written
