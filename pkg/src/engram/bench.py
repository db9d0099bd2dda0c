"""Extended one-shot benchmark: corruption generators, matching metrics,
the deterministic sweep runner and result persistence.

A sweep cell is one (task, corruption kind, level, seed) combination; every
cell runs 20 independent study/recall episodes and reports the mean of the
per-run scores.  All randomness is derived from the cell coordinates, so a
sweep is reproducible cell by cell regardless of execution order.
"""

import csv
import dataclasses
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fastnn import FastNN, FastNnConfig
from .memory import ShortTermMemory, StmConfig
from .omniglot import (
    load_omniglot,
    sample_run_classification,
    sample_run_instance,
)
from .vision import VcConfig, load_filters, preprocess, vc_forward

MODEL_KEYS = ("ltm", "aha", "fastnn")
TASKS = ("classification", "instance")
KINDS = ("none", "occlusion", "noise")
MAX_LEVEL = 0.98

_CORRUPT_SALT = 0xC0DE
_AHA_SALT = 0xA7A
_FASTNN_SALT = 0xFA57
_KIND_CODES = {"occlusion": 1, "noise": 2}


# ---------------------------------------------------------------------------
# corruption

@dataclass(frozen=True)
class CorruptionSpec:
    kind: str = "none"
    level: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown corruption kind {self.kind!r}")
        if not 0.0 <= self.level <= MAX_LEVEL:
            raise ValueError(f"level {self.level} outside [0, {MAX_LEVEL}]")


def occlude(image, diameter_frac, rng):
    """Zero out a filled circle, fully contained in the image.

    The diameter is a fraction of the side length; the fill value is the
    post-normalisation background, 0.
    """
    img = np.array(image)
    if diameter_frac <= 0:
        return img
    if diameter_frac > MAX_LEVEL:
        raise ValueError(f"diameter fraction {diameter_frac} > {MAX_LEVEL}")
    h, w = img.shape
    r = diameter_frac * min(h, w) / 2.0
    cy = rng.uniform(r, h - r)
    cx = rng.uniform(r, w - r)
    yy = np.arange(h)[:, None] + 0.5
    xx = np.arange(w)[None, :] + 0.5
    img[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = 0.0
    return img


def add_noise(image, area_frac, rng):
    """Replace an exact fraction of distinct pixels with uniform [0,1) values."""
    img = np.array(image)
    if area_frac <= 0:
        return img
    if area_frac > MAX_LEVEL:
        raise ValueError(f"area fraction {area_frac} > {MAX_LEVEL}")
    n = int(round(area_frac * img.size))
    flat = img.reshape(-1)
    idx = rng.choice(img.size, size=n, replace=False)
    flat[idx] = rng.random(n, dtype=np.float64).astype(img.dtype)
    return img


def corrupt(image, kind, level, rng):
    if kind == "none" or level == 0.0:
        return np.array(image)
    if kind == "occlusion":
        return occlude(image, level, rng)
    if kind == "noise":
        return add_noise(image, level, rng)
    raise ValueError(f"unknown corruption kind {kind!r}")


# ---------------------------------------------------------------------------
# metrics

def match_accuracy(study_states, recall_states, correspondence):
    """Fraction of recall states whose minimum-MSE study state is the true one."""
    S = np.atleast_2d(np.asarray(study_states, dtype=float))
    R = np.atleast_2d(np.asarray(recall_states, dtype=float))
    if S.shape[1] != R.shape[1]:
        raise ValueError(f"state dims differ: {S.shape[1]} vs {R.shape[1]}")
    d2 = ((R[:, None, :] - S[None, :, :]) ** 2).mean(axis=2)
    predicted = np.argmin(d2, axis=1)
    return float(np.mean(predicted == np.asarray(correspondence)))


def recall_loss(study_images, recalled_images, correspondence):
    """Mean per-pair MSE between each recalled image and its true study image."""
    S = np.atleast_2d(np.asarray(study_images, dtype=float))
    R = np.atleast_2d(np.asarray(recalled_images, dtype=float))
    corr = np.asarray(correspondence)
    return float(np.mean([np.mean((R[i] - S[corr[i]]) ** 2) for i in range(R.shape[0])]))


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class Hyperparams:
    vc: VcConfig = field(default_factory=VcConfig)
    stm: StmConfig = field(default_factory=StmConfig)
    fastnn: FastNnConfig = field(default_factory=FastNnConfig)


def default_levels():
    """The corruption grid: a clean baseline plus ten increments below the cap."""
    return tuple(round(0.096 * i, 3) for i in range(11))


@dataclass(frozen=True)
class RunConfig:
    dataset_root: str = ""
    filters_path: str = ""
    out_dir: str = "results"
    models: tuple = MODEL_KEYS
    tasks: tuple = TASKS
    kinds: tuple = KINDS
    levels: tuple = field(default_factory=default_levels)
    seeds: tuple = (0, 1, 2)
    runs: int = 20
    workers: int = 1
    hp: Hyperparams = field(default_factory=Hyperparams)


@dataclass
class MetricsRecord:
    model: str
    task: str
    kind: str
    level: float
    seed: int
    runs: int
    accuracy: float
    recall_loss: float
    per_run_accuracy: tuple
    per_run_loss: tuple


# --- flat key=value serialisation -----------------------------------------

def flatten_config(obj, prefix=""):
    out = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            out.update(flatten_config(value, key + "."))
        elif isinstance(value, tuple):
            out[key] = ",".join(format(v) for v in value)
        else:
            out[key] = format(value)
    return out


def _build_dataclass(defaults, values, prefix=""):
    kwargs = {}
    for f in dataclasses.fields(defaults):
        key = f"{prefix}{f.name}"
        current = getattr(defaults, f.name)
        if dataclasses.is_dataclass(current):
            kwargs[f.name] = _build_dataclass(current, values, key + ".")
        elif key in values:
            kwargs[f.name] = type(current)(values[key])
        else:
            kwargs[f.name] = current
    return type(defaults)(**kwargs)


_TUPLE_FIELDS = {
    "models": str, "tasks": str, "kinds": str,
    "levels": float, "seeds": int,
}


def config_from_values(values):
    """Build a RunConfig from flat key=value strings; missing keys default."""
    kwargs = {}
    for f in dataclasses.fields(RunConfig):
        if f.name == "hp":
            kwargs["hp"] = _build_dataclass(Hyperparams(), values, "hp.")
        elif f.name in _TUPLE_FIELDS:
            if f.name in values:
                text = values[f.name].strip()
                elem = _TUPLE_FIELDS[f.name]
                kwargs[f.name] = tuple(elem(v) for v in text.split(",")) if text else ()
        elif f.name in values:
            default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
            kwargs[f.name] = type(default)(values[f.name])
    return RunConfig(**kwargs)


def write_config(config, path):
    lines = [f"{k}={v}" for k, v in flatten_config(config).items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_config(path):
    values = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}: malformed line {line!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return config_from_values(values)


# ---------------------------------------------------------------------------
# sweep execution

_MODEL_LABELS = {
    "ltm": ("LTM",),
    "aha": ("LTM+AHA-PR", "LTM+AHA-PC"),
    "fastnn": ("LTM+FastNN",),
}


def _corruption_rng(kind, level, seed, run):
    return np.random.default_rng(np.random.SeedSequence(
        [_CORRUPT_SALT, _KIND_CODES[kind], seed, run, int(round(level * 1e6))]))


def evaluate_cell(store, layer, hp, models, task, kind, level, seed, runs):
    """Run one sweep cell; returns {model label: (accuracies, losses)} per run."""
    sampler = sample_run_classification if task == "classification" else sample_run_instance
    acc = defaultdict(list)
    loss = defaultdict(list)
    for run in range(runs):
        episode = sampler(store, run, seed)
        study_imgs = np.stack([preprocess(s.image) for s in episode.study])
        recall_imgs = np.stack([preprocess(s.image) for s in episode.recall])
        if kind != "none" and level > 0:
            rng = _corruption_rng(kind, level, seed, run)
            recall_imgs = np.stack([corrupt(im, kind, level, rng) for im in recall_imgs])
        fv_study = np.stack([vc_forward(im, layer, hp.vc).values
                             for im in study_imgs]).astype(np.float64)
        fv_recall = np.stack([vc_forward(im, layer, hp.vc).values
                              for im in recall_imgs]).astype(np.float64)
        study_pix = study_imgs.reshape(len(study_imgs), -1).astype(np.float64)
        corr = episode.correspondence

        if "ltm" in models:
            acc["LTM"].append(match_accuracy(fv_study, fv_recall, corr))
            loss["LTM"].append(float("nan"))
        if "aha" in models:
            stm = ShortTermMemory(fv_study.shape[1], study_pix.shape[1], hp.stm,
                                  seed=[_AHA_SALT, seed, run])
            stm.study(fv_study, study_pix)
            result = stm.recall(fv_recall)
            acc["LTM+AHA-PR"].append(match_accuracy(stm.study_targets, result.pr_out, corr))
            acc["LTM+AHA-PC"].append(match_accuracy(stm.engrams, result.pc_out, corr))
            pm_loss = recall_loss(study_pix, result.images, corr)
            loss["LTM+AHA-PR"].append(pm_loss)
            loss["LTM+AHA-PC"].append(pm_loss)
        if "fastnn" in models:
            model = FastNN(fv_study.shape[1], study_pix.shape[1], hp.fastnn,
                           seed=np.random.SeedSequence([_FASTNN_SALT, seed, run]))
            model.study(fv_study, study_pix)
            states, images = model.recall(fv_recall)
            acc["LTM+FastNN"].append(match_accuracy(model.study_latents, states, corr))
            loss["LTM+FastNN"].append(recall_loss(study_pix, images, corr))
    return {label: (tuple(acc[label]), tuple(loss[label]))
            for key in models for label in _MODEL_LABELS[key]}


def _cell_list(config):
    cells = []
    for task in config.tasks:
        for kind in config.kinds:
            levels = (0.0,) if kind == "none" else config.levels
            for level in levels:
                for seed in config.seeds:
                    cells.append((task, kind, level, seed))
    return cells


def _records_from_cell(cell, results, runs):
    task, kind, level, seed = cell
    records = []
    for label, (accs, losses) in results.items():
        records.append(MetricsRecord(
            model=label, task=task, kind=kind, level=level, seed=seed,
            runs=runs, accuracy=float(np.mean(accs)),
            recall_loss=float(np.nanmean(losses)) if not all(np.isnan(losses)) else float("nan"),
            per_run_accuracy=accs, per_run_loss=losses))
    return records


_WORKER_STATE = {}


def _worker_init(dataset_root, filters_path):
    _WORKER_STATE["store"] = load_omniglot(dataset_root)
    _WORKER_STATE["layer"] = load_filters(filters_path)


def _worker_cell(args):
    hp, models, runs, cell = args
    return cell, evaluate_cell(_WORKER_STATE["store"], _WORKER_STATE["layer"],
                               hp, models, *cell, runs)


def run_sweep(store, layer, config, progress=None):
    """Execute every cell of the configured sweep.

    Returns (records, failures); a failing cell is recorded as
    (cell, message) and the sweep continues.
    """
    cells = _cell_list(config)
    records = []
    failures = []
    if config.workers > 1:
        with ProcessPoolExecutor(
                max_workers=config.workers, initializer=_worker_init,
                initargs=(config.dataset_root, config.filters_path)) as pool:
            futures = [pool.submit(_worker_cell, (config.hp, config.models, config.runs, cell))
                       for cell in cells]
            for fut, cell in zip(futures, cells):
                try:
                    done_cell, results = fut.result()
                    records.extend(_records_from_cell(done_cell, results, config.runs))
                except Exception as exc:  # noqa: BLE001 - per-cell isolation
                    failures.append((cell, str(exc)))
                if progress:
                    progress(cell)
    else:
        for cell in cells:
            try:
                results = evaluate_cell(store, layer, config.hp, config.models,
                                        *cell, config.runs)
                records.extend(_records_from_cell(cell, results, config.runs))
            except Exception as exc:  # noqa: BLE001
                failures.append((cell, str(exc)))
            if progress:
                progress(cell)
    records.sort(key=lambda r: (r.task, r.kind, r.level, r.seed, r.model))
    return records, failures


def run_experiment(config, progress=None):
    """Load inputs from the config paths and execute the sweep."""
    store = load_omniglot(config.dataset_root)
    layer = load_filters(config.filters_path)
    return run_sweep(store, layer, config, progress)


# ---------------------------------------------------------------------------
# persistence

SUMMARY_COLUMNS = ("model", "task", "corruption", "level", "seed",
                   "accuracy", "recall_loss", "runs")
DETAIL_COLUMNS = ("model", "task", "corruption", "level", "seed", "run",
                  "accuracy", "recall_loss")


def _fmt(x):
    if isinstance(x, float):
        return format(x, ".10g")
    return str(x)


def write_summary_csv(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for r in records:
            writer.writerow([r.model, r.task, r.kind, _fmt(r.level), r.seed,
                             _fmt(r.accuracy), _fmt(r.recall_loss), r.runs])


def write_details_csv(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DETAIL_COLUMNS)
        for r in records:
            for run, (a, l) in enumerate(zip(r.per_run_accuracy, r.per_run_loss)):
                writer.writerow([r.model, r.task, r.kind, _fmt(r.level),
                                 r.seed, run, _fmt(a), _fmt(l)])


def read_summary_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != SUMMARY_COLUMNS:
            raise ValueError(f"{path}: expected columns {SUMMARY_COLUMNS}")
        rows = []
        for row in reader:
            rows.append({
                "model": row["model"], "task": row["task"],
                "corruption": row["corruption"], "level": float(row["level"]),
                "seed": int(row["seed"]), "accuracy": float(row["accuracy"]),
                "recall_loss": float(row["recall_loss"]), "runs": int(row["runs"]),
            })
    return rows


def export_plot_data(rows, out_dir):
    """Write per-(task, kind) columnar files with mean/std/min/max per curve
    and level, aggregated over seeds."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups = defaultdict(lambda: defaultdict(list))
    for row in rows:
        groups[(row["task"], row["corruption"])][(row["model"], row["level"])].append(row)
    written = []
    for (task, kind), curves in sorted(groups.items()):
        path = out_dir / f"plot_{task}_{kind}.txt"
        lines = ["model level acc_mean acc_std acc_min acc_max "
                 "loss_mean loss_std loss_min loss_max"]
        for (model, level), cell_rows in sorted(curves.items()):
            accs = np.array([r["accuracy"] for r in cell_rows])
            losses = np.array([r["recall_loss"] for r in cell_rows])
            lines.append(" ".join([
                model, _fmt(level),
                _fmt(float(accs.mean())), _fmt(float(accs.std())),
                _fmt(float(accs.min())), _fmt(float(accs.max())),
                _fmt(float(losses.mean())), _fmt(float(losses.std())),
                _fmt(float(losses.min())), _fmt(float(losses.max())),
            ]))
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    return written
