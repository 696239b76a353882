"""Experiment manifests and run orchestration behind the command line.

A manifest pins everything that determines a run: dataset digest, scale,
partition, model dimensions, training settings, selection scheme, and seeds.
Rerunning any command from the same manifest against the same dataset file
reproduces outputs byte for byte.  Every artifact lands in the run's output
directory next to the manifest that produced it.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import tempfile
import zlib
from dataclasses import dataclass

import numpy as np

from rankwin.data import Dataset, load_dataset
from rankwin.engine import OracleRegressor, estimate_rank
from rankwin.errors import ConfigError, DigestMismatchError
from rankwin.metrics import (EvalRecord, accuracy, cumulative_score,
                             epsilon_error, format_report, mae)
from rankwin.nets import (EncoderSpec, HeadSpec, RelativeRegressor,
                          load_checkpoint, model_digest, save_checkpoint)
from rankwin.partition import RankGroup, partition_equal, partition_golden
from rankwin.refdb import (SelectionKind, SelectionScheme, TAG_GLOBAL, TAG_RAW,
                           build_database, load_database, local_tag,
                           save_database)
from rankwin.training import TrainConfig, train
from rankwin.windows import RankRange, RankScale, ScaleKind

__all__ = [
    "ExperimentManifest",
    "file_digest",
    "atomic_write_text",
    "run_train",
    "run_build_refdb",
    "run_eval",
    "run_simulate",
    "run_sweep",
    "inspect_run",
    "METRICS_COLUMNS",
]

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
REFDB_NAME = "refdb.npz"
METRICS_COLUMNS = ("run_id", "split", "mae", "cs5", "eps_error", "accuracy",
                   "mean_iters", "converged_pct")
PARTITIONS = ("golden5", "equal3", "none")


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


@dataclass(frozen=True)
class ExperimentManifest:
    """Everything that determines a run's outputs, in plain JSON types."""

    dataset_digest: str
    domain_lo: int
    domain_hi: int
    scale_kind: str = "geo"
    tau: float = 0.1
    partition: str = "golden5"
    alpha: int = 6
    epochs: int = 30
    batch_size: int = 18
    lr: float = 1e-4
    triplets_per_instance: int = 4
    seed: int = 0
    encoder_hidden: tuple[int, ...] = (32,)
    encoded_dim: int = 16
    head_dims: tuple[int, int, int] = (256, 64, 1)
    scheme: str = "min"
    scheme_seed: int = 0
    k: int = 5
    max_iter: int = 10
    pool_cap: int | None = 256
    pair_cap: int | None = 64
    oracle_noise_std: float = 0.0
    format_version: int = MANIFEST_VERSION

    def __post_init__(self) -> None:
        if self.partition not in PARTITIONS:
            raise ConfigError(f"partition must be one of {PARTITIONS}, got {self.partition!r}")
        if self.scheme not in tuple(k.value for k in SelectionKind):
            raise ConfigError(f"unknown selection scheme {self.scheme!r}")
        if self.scale_kind not in ("ari", "geo"):
            raise ConfigError(f"scale must be 'ari' or 'geo', got {self.scale_kind!r}")
        # the rest is validated by the objects built from these fields

    @property
    def scale(self) -> RankScale:
        return RankScale(ScaleKind(self.scale_kind), self.tau)

    @property
    def domain(self) -> RankRange:
        return RankRange(self.domain_lo, self.domain_hi)

    @property
    def selection(self) -> SelectionScheme:
        return SelectionScheme(SelectionKind(self.scheme), self.scheme_seed)

    @property
    def encoder_spec_dims(self) -> tuple[tuple[int, ...], int]:
        return self.encoder_hidden, self.encoded_dim

    def make_groups(self) -> list[RankGroup] | None:
        if self.partition == "none":
            return None
        if self.partition == "golden5":
            return partition_golden(self.domain, self.alpha)
        return partition_equal(self.domain, 3, self.alpha)

    def train_config(self) -> TrainConfig:
        return TrainConfig(scale=self.scale, epochs=self.epochs,
                           batch_size=self.batch_size, lr=self.lr,
                           alpha=self.alpha, seed=self.seed,
                           triplets_per_instance=self.triplets_per_instance)

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["encoder_hidden"] = list(self.encoder_hidden)
        d["head_dims"] = list(self.head_dims)
        return json.dumps(d, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentManifest":
        d = json.loads(text)
        if d.get("format_version") != MANIFEST_VERSION:
            raise ConfigError(f"unsupported manifest version {d.get('format_version')}")
        d["encoder_hidden"] = tuple(d["encoder_hidden"])
        d["head_dims"] = tuple(d["head_dims"])
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown manifest fields: {sorted(extra)}")
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    @property
    def run_id(self) -> str:
        return self.digest()[:12]


def write_manifest(manifest: ExperimentManifest, out_dir: str) -> str:
    path = os.path.join(out_dir, MANIFEST_NAME)
    atomic_write_text(path, manifest.to_json())
    return path


def read_manifest(out_dir: str) -> ExperimentManifest:
    path = os.path.join(out_dir, MANIFEST_NAME)
    if not os.path.exists(path):
        raise ConfigError(f"no {MANIFEST_NAME} in {out_dir}; run train first")
    with open(path) as fh:
        return ExperimentManifest.from_json(fh.read())


def _check_dataset(manifest: ExperimentManifest, dataset_path: str) -> Dataset:
    digest = file_digest(dataset_path)
    if digest != manifest.dataset_digest:
        raise DigestMismatchError(
            f"dataset {dataset_path} digest {digest[:12]}... does not match "
            f"manifest {manifest.dataset_digest[:12]}...")
    return load_dataset(dataset_path)


def _instance_key(instance_id: str) -> int:
    return zlib.crc32(instance_id.encode())


def run_train(dataset_path: str, manifest: ExperimentManifest, out_dir: str) -> None:
    """Train the global model (plus locals under a partition) and save them."""
    os.makedirs(out_dir, exist_ok=True)
    dataset = _check_dataset(manifest, dataset_path)
    train_ds = dataset.subset("train")
    if len(train_ds) == 0:
        raise ConfigError("dataset has no train split")
    groups = manifest.make_groups()
    encoder = EncoderSpec(train_ds.feature_dim, manifest.encoder_hidden, manifest.encoded_dim)
    head = HeadSpec(manifest.head_dims)
    run_id = manifest.run_id
    log_rows: list[str] = ["run_id,model_key,epoch,mean_loss"]
    global_model, local_models = train(
        train_ds, manifest.train_config(), groups, encoder=encoder, head=head,
        on_epoch=lambda key, epoch, loss: log_rows.append(
            f"{run_id},{key},{epoch},{loss:.8f}"))
    write_manifest(manifest, out_dir)
    save_checkpoint(global_model, os.path.join(out_dir, "global.npz"), run_id=run_id)
    for i, model in enumerate(local_models):
        save_checkpoint(model, os.path.join(out_dir, f"local{i}.npz"), run_id=run_id)
    atomic_write_text(os.path.join(out_dir, "train_log.csv"), "\n".join(log_rows) + "\n")


def load_models(out_dir: str, manifest: ExperimentManifest,
                ) -> tuple[RelativeRegressor, list[RelativeRegressor]]:
    global_model, _ = load_checkpoint(os.path.join(out_dir, "global.npz"))
    groups = manifest.make_groups()
    local_models = []
    for i in range(len(groups) if groups else 0):
        model, _ = load_checkpoint(os.path.join(out_dir, f"local{i}.npz"))
        local_models.append(model)
    return global_model, local_models


def run_build_refdb(dataset_path: str, out_dir: str) -> str:
    """Embed the train split under every saved model and table its windows."""
    manifest = read_manifest(out_dir)
    dataset = _check_dataset(manifest, dataset_path)
    train_ds = dataset.subset("train")
    global_model, local_models = load_models(out_dir, manifest)
    models: dict[str, RelativeRegressor | None] = {TAG_GLOBAL: global_model}
    for i, model in enumerate(local_models):
        models[local_tag(i)] = model
    db = build_database(train_ds, models, manifest.scale, manifest.domain,
                        groups=manifest.make_groups(), alpha=manifest.alpha,
                        pool_cap=manifest.pool_cap, pair_cap=manifest.pair_cap,
                        seed=manifest.seed)
    path = os.path.join(out_dir, REFDB_NAME)
    save_database(db, path, run_id=manifest.run_id)
    return path


def _phase_iteration_table(traces, phase: str, max_iter: int):
    """Per-iteration mean |error| and cumulative converged %, one phase."""
    rows = []
    series = []
    for truth, trace in traces:
        records = [r for r in trace.records if r.phase == phase]
        if not records:
            continue
        estimates = [r.estimate for r in records]
        # the first window is built around the estimate entering the phase
        prev = records[0].steps[0].window.center
        converged_at = None
        for i, rec in enumerate(records):
            if rec.estimate == prev:
                converged_at = i + 1
            prev = rec.estimate
        series.append((truth, estimates, converged_at))
    if not series:
        return rows
    n = len(series)
    for t in range(1, max_iter + 1):
        errs = [abs(est[min(t, len(est)) - 1] - truth) for truth, est, _ in series]
        conv = sum(1 for _, _, c in series if c is not None and c <= t)
        rows.append((phase, t, float(np.mean(errs)), 100.0 * conv / n))
    return rows


def _metrics_csv(run_id: str, split: str, values: dict[str, float | None]) -> str:
    cells = [run_id, split]
    for col in METRICS_COLUMNS[2:]:
        v = values[col]
        cells.append("" if v is None else f"{v:.6f}")
    return ",".join(METRICS_COLUMNS) + "\n" + ",".join(cells) + "\n"


def _write_eval_outputs(out_dir: str, run_id: str, split: str, records, traces,
                        max_iter: int, prefix: str = "") -> dict[str, float | None]:
    has_sigma = all(r.sigma is not None for r in records)
    values: dict[str, float | None] = {
        "mae": mae(records),
        "cs5": cumulative_score(records, 5),
        "eps_error": epsilon_error(records) if has_sigma else None,
        "accuracy": accuracy(records),
        "mean_iters": float(np.mean([t.iterations for _, t in traces])),
        "converged_pct": float(100.0 * np.mean([t.converged for _, t in traces])),
    }
    atomic_write_text(os.path.join(out_dir, f"{prefix}metrics.csv"),
                      _metrics_csv(run_id, split, values))
    report = {"run_id": run_id, "split": split}
    report.update({k: ("" if v is None else v) for k, v in values.items()})
    atomic_write_text(os.path.join(out_dir, f"{prefix}metrics.txt"), format_report(report))
    trace_lines = []
    for record, (truth, trace) in zip(records, traces):
        row = {"run_id": run_id, "id": record.instance_id, "truth": truth}
        row.update(trace.to_dict())
        trace_lines.append(json.dumps(row, sort_keys=True))
    atomic_write_text(os.path.join(out_dir, f"{prefix}traces.jsonl"),
                      "\n".join(trace_lines) + "\n")
    conv_rows = ["run_id,phase,iteration,mean_abs_error,converged_cum_pct"]
    for phase in ("global", "local"):
        for ph, t, err, pct in _phase_iteration_table(traces, phase, max_iter):
            conv_rows.append(f"{run_id},{ph},{t},{err:.6f},{pct:.6f}")
    atomic_write_text(os.path.join(out_dir, f"{prefix}convergence.csv"),
                      "\n".join(conv_rows) + "\n")
    return values


def run_eval(dataset_path: str, out_dir: str, split: str = "test",
             scheme: str | None = None, scheme_seed: int | None = None,
             prefix: str = "") -> dict[str, float | None]:
    """Run inference over a split with the stored models and database."""
    manifest = read_manifest(out_dir)
    if scheme is not None or scheme_seed is not None:
        manifest = dataclasses.replace(
            manifest,
            scheme=scheme if scheme is not None else manifest.scheme,
            scheme_seed=scheme_seed if scheme_seed is not None else manifest.scheme_seed)
    dataset = _check_dataset(manifest, dataset_path)
    eval_ds = dataset.subset(split)
    if len(eval_ds) == 0:
        raise ConfigError(f"dataset has no {split!r} split")
    global_model, local_models = load_models(out_dir, manifest)
    expected = {TAG_GLOBAL: model_digest(global_model)}
    for i, model in enumerate(local_models):
        expected[local_tag(i)] = model_digest(model)
    db = load_database(os.path.join(out_dir, REFDB_NAME), expected)
    groups = manifest.make_groups()
    records, traces = [], []
    for i in range(len(eval_ds)):
        trace = estimate_rank(
            eval_ds.features[i], db=db, scale=manifest.scale,
            scheme=manifest.selection, domain=manifest.domain,
            global_model=global_model, local_models=local_models or None,
            groups=groups, k=manifest.k, max_iter=manifest.max_iter)
        truth = int(eval_ds.ranks[i])
        sigma = float(eval_ds.sigmas[i]) if eval_ds.has_sigma else None
        records.append(EvalRecord(eval_ds.ids[i], truth, trace.final, sigma))
        traces.append((truth, trace))
    return _write_eval_outputs(out_dir, manifest.run_id, split, records, traces,
                               manifest.max_iter, prefix=prefix)


def run_simulate(dataset_path: str, manifest: ExperimentManifest, out_dir: str,
                 split: str = "test") -> dict[str, float | None]:
    """Oracle-driven window dynamics: no models, kNN init on raw features."""
    os.makedirs(out_dir, exist_ok=True)
    dataset = _check_dataset(manifest, dataset_path)
    train_ds = dataset.subset("train")
    eval_ds = dataset.subset(split)
    if len(train_ds) == 0 or len(eval_ds) == 0:
        raise ConfigError(f"dataset needs nonempty train and {split!r} splits")
    write_manifest(manifest, out_dir)
    db = build_database(train_ds, {TAG_RAW: None}, manifest.scale, manifest.domain,
                        alpha=manifest.alpha, pool_cap=manifest.pool_cap,
                        pair_cap=manifest.pair_cap, seed=manifest.seed)
    oracle = OracleRegressor(noise_std=manifest.oracle_noise_std, seed=manifest.seed)
    records, traces = [], []
    for i in range(len(eval_ds)):
        truth = int(eval_ds.ranks[i])
        trace = estimate_rank(
            eval_ds.features[i], db=db, scale=manifest.scale,
            scheme=manifest.selection, domain=manifest.domain, oracle=oracle,
            truth=truth, k=manifest.k, max_iter=manifest.max_iter,
            instance_key=_instance_key(eval_ds.ids[i]))
        sigma = float(eval_ds.sigmas[i]) if eval_ds.has_sigma else None
        records.append(EvalRecord(eval_ds.ids[i], truth, trace.final, sigma))
        traces.append((truth, trace))
    return _write_eval_outputs(out_dir, manifest.run_id, split, records, traces,
                               manifest.max_iter)


def run_sweep(dataset_path: str, out_dir: str, base: ExperimentManifest,
              cells: list[tuple[str, float]], split: str = "test") -> str:
    """Train+evaluate one run per (scale, tau) cell; aggregate one CSV."""
    if not cells:
        raise ConfigError("sweep needs at least one (scale, tau) cell")
    os.makedirs(out_dir, exist_ok=True)
    rows = ["run_id,scale,tau,scheme," + ",".join(METRICS_COLUMNS[2:])]
    for kind, tau in cells:
        manifest = dataclasses.replace(base, scale_kind=kind, tau=tau)
        cell_dir = os.path.join(out_dir, f"cell_{kind}_{tau:g}")
        run_train(dataset_path, manifest, cell_dir)
        run_build_refdb(dataset_path, cell_dir)
        values = run_eval(dataset_path, cell_dir, split=split)
        cells_txt = [manifest.run_id, kind, f"{tau:g}", manifest.scheme]
        cells_txt += ["" if values[c] is None else f"{values[c]:.6f}"
                      for c in METRICS_COLUMNS[2:]]
        rows.append(",".join(cells_txt))
    path = os.path.join(out_dir, "sweep.csv")
    atomic_write_text(path, "\n".join(rows) + "\n")
    return path


def inspect_run(out_dir: str) -> str:
    """Human-readable summary of a run directory."""
    manifest = read_manifest(out_dir)
    lines = [f"run_id {manifest.run_id}", "", "manifest:"]
    lines.extend("  " + line for line in manifest.to_json().strip().splitlines())
    db_path = os.path.join(out_dir, REFDB_NAME)
    if os.path.exists(db_path):
        db = load_database(db_path)
        lines += ["", f"reference database: {len(db)} instances"]
        for tag in db.tags:
            n_windows = len(db.tables.get(tag, {}))
            lines.append(f"  {tag}: digest {db.digests[tag][:12]} windows {n_windows}")
            if tag in db.tables:
                gammas = [e.min_gamma for e in db.tables[tag].values()]
                lines.append(f"    min-gamma range [{min(gammas):.4f}, {max(gammas):.4f}]")
    for name in sorted(os.listdir(out_dir)):
        if name.endswith("metrics.csv"):
            with open(os.path.join(out_dir, name)) as fh:
                lines += ["", name + ":"] + ["  " + l for l in fh.read().strip().splitlines()]
    return "\n".join(lines) + "\n"
