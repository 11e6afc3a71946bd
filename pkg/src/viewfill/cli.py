"""Command-line front end wiring files, config, and the pipeline stages.

Subcommands: synth, train, rank, classify, eval. Configuration comes from
an optional key=value file plus flag overrides; every run writes the fully
resolved configuration next to its outputs so results can be reproduced
from the output directory alone. Exit codes: 0 success, 2 configuration
error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import (
    AllZeroProduct,
    ConfigError,
    DegenerateBatch,
    EmbeddingSet,
    EmptyQuerySet,
    MissingScore,
    ScoreSet,
    ViewfillError,
    ZeroVectorError,
)
from .evaluation import (
    ExperimentConfig,
    average_precision_at_k,
    macro_f1,
    micro_f1,
    run_experiment,
    write_map_curve_csv,
    write_report_csv,
    write_report_text,
)
from .fileio import (
    read_embedding_file,
    read_score_file,
    write_embedding_file,
    write_score_file,
)
from .fusion import mean_fuse, product_fuse, write_fusion_results, FusionResult
from .metric import (
    TrainConfig,
    load_head,
    save_head,
    train,
    write_loss_trace,
)
from .retrieval import CacheMismatch, build_index, load_index, rank, save_index
from .synthetic import SyntheticConfig, generate_synthetic

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

DEFAULT_K_LIST = "1,2,3,4,5,10,50,100"

# every key a config file may set, with its default as a string
CONFIG_DEFAULTS = {
    "embeddings_view0": "",
    "embeddings_view1": "",
    "scores_view0": "",
    "scores_view1": "",
    "out": "out",
    "seed": "0",
    "k": DEFAULT_K_LIST,
    "missing_view": "1",
    "jobs": "1",
    "epochs": "200",
    "gamma": "10.0",
    "learning_rate": "1e-5",
    "beta1": "0.9",
    "beta2": "0.999",
    "batch_per_epoch": "0",
    "embed_dim": "128",
    "n_folds": "5",
    "fully_paired": "1",
    "classes": "8",
    "per_class": "50",
    "dim_view1": "32",
    "dim_view2": "32",
    "correlation": "0.9",
    "noise": "0.3",
    "temperature": "1.0",
}


def parse_config_file(path: Path) -> dict[str, str]:
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in CONFIG_DEFAULTS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def _parse_int(raw: dict[str, str], key: str) -> int:
    try:
        return int(raw[key])
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {raw[key]!r}") from None


def _parse_float(raw: dict[str, str], key: str) -> float:
    try:
        return float(raw[key])
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {raw[key]!r}") from None


def _parse_k_list(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise ConfigError(f"k list must be comma-separated integers, got {text!r}") from None
    if not ks or ks[0] < 1 or any(b <= a for a, b in zip(ks, ks[1:])):
        raise ConfigError(f"k list must be strictly increasing and >= 1, got {text!r}")
    return ks


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved run parameters plus the raw strings they came from."""

    raw: dict[str, str]
    out_dir: Path
    seed: int
    k_list: tuple[int, ...]
    missing_view: int
    jobs: int
    n_folds: int
    fully_paired: bool

    @property
    def available_view(self) -> int:
        return 1 - self.missing_view

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(
                epochs=_parse_int(self.raw, "epochs"),
                gamma=_parse_float(self.raw, "gamma"),
                learning_rate=_parse_float(self.raw, "learning_rate"),
                adam_beta1=_parse_float(self.raw, "beta1"),
                adam_beta2=_parse_float(self.raw, "beta2"),
                seed=self.seed,
                batch_per_epoch=_parse_int(self.raw, "batch_per_epoch"),
                embed_dim=_parse_int(self.raw, "embed_dim"),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def synth_config(self) -> SyntheticConfig:
        try:
            return SyntheticConfig(
                classes=_parse_int(self.raw, "classes"),
                per_class=_parse_int(self.raw, "per_class"),
                dim_view1=_parse_int(self.raw, "dim_view1"),
                dim_view2=_parse_int(self.raw, "dim_view2"),
                correlation=_parse_float(self.raw, "correlation"),
                noise=_parse_float(self.raw, "noise"),
                seed=self.seed,
                temperature=_parse_float(self.raw, "temperature"),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def embedding_path(self, view: int) -> Path:
        return self._input_path(f"embeddings_view{view}")

    def score_path(self, view: int) -> Path:
        return self._input_path(f"scores_view{view}")

    def _input_path(self, key: str) -> Path:
        value = self.raw.get(key, "")
        if not value:
            raise ConfigError(f"config key {key} is required for this command")
        path = Path(value)
        if not path.is_file():
            raise ConfigError(f"{key} points to a missing file: {path}")
        return path

    def head_path(self, view: int) -> Path:
        return self.out_dir / f"head_view{view}.mvph"


def resolve_config(args: argparse.Namespace) -> RunConfig:
    raw = dict(CONFIG_DEFAULTS)
    if args.config is not None:
        raw.update(parse_config_file(Path(args.config)))
    if args.seed is not None:
        raw["seed"] = str(args.seed)
    if args.k is not None:
        raw["k"] = args.k
    if args.missing_view is not None:
        raw["missing_view"] = str(args.missing_view)
    if args.jobs is not None:
        raw["jobs"] = str(args.jobs)
    if args.out is not None:
        raw["out"] = args.out

    missing_view = _parse_int(raw, "missing_view")
    if missing_view not in (0, 1):
        raise ConfigError(f"missing_view must be 0 or 1, got {missing_view}")
    jobs = _parse_int(raw, "jobs")
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs}")
    fully_paired = _parse_int(raw, "fully_paired")
    if fully_paired not in (0, 1):
        raise ConfigError(f"fully_paired must be 0 or 1, got {fully_paired}")
    return RunConfig(
        raw=raw,
        out_dir=Path(raw["out"]),
        seed=_parse_int(raw, "seed"),
        k_list=_parse_k_list(raw["k"]),
        missing_view=missing_view,
        jobs=jobs,
        n_folds=_parse_int(raw, "n_folds"),
        fully_paired=bool(fully_paired),
    )


def write_resolved_config(cfg: RunConfig) -> None:
    lines = [f"{key}={cfg.raw[key]}" for key in sorted(cfg.raw)]
    (cfg.out_dir / "resolved_config.txt").write_text("\n".join(lines) + "\n")


def _load_views(cfg: RunConfig) -> tuple[EmbeddingSet, EmbeddingSet]:
    return read_embedding_file(cfg.embedding_path(0)), read_embedding_file(cfg.embedding_path(1))


def _load_scores(cfg: RunConfig) -> tuple[ScoreSet, ScoreSet]:
    return read_score_file(cfg.score_path(0)), read_score_file(cfg.score_path(1))


def cmd_synth(cfg: RunConfig) -> int:
    data = generate_synthetic(cfg.synth_config())
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_embedding_file(data.view1, cfg.out_dir / "view0.mveb")
    write_embedding_file(data.view2, cfg.out_dir / "view1.mveb")
    write_score_file(data.scores_view1, cfg.out_dir / "scores_view0.mvsc")
    write_score_file(data.scores_view2, cfg.out_dir / "scores_view1.mvsc")
    write_resolved_config(cfg)
    print(f"wrote synthetic dataset to {cfg.out_dir}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    view0, view1 = _load_views(cfg)
    result = train([view0, view1], cfg.train_config())
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    for head in result.heads:
        save_head(head, cfg.head_path(head.view))
    write_loss_trace(result.trace, cfg.out_dir / "loss_trace.csv")
    write_resolved_config(cfg)
    if result.trace:
        print(f"trained {len(result.trace)} epochs, final loss {result.trace[-1]!r}")
    return EXIT_OK


def _load_heads(cfg: RunConfig):
    heads = []
    for view in (0, 1):
        path = cfg.head_path(view)
        if not path.is_file():
            raise ConfigError(f"missing checkpoint {path}; run the train command first")
        heads.append(load_head(path))
    return heads


def _build_or_load_index(cfg: RunConfig, gallery: EmbeddingSet, head):
    """Reuse the cached index when its checkpoint checksum still matches."""
    cache = cfg.out_dir / f"index_view{head.view}.mvix"
    if cache.is_file():
        try:
            return load_index(cache, head)
        except CacheMismatch:
            pass
    index = build_index(gallery, head)
    save_index(index, cache, head)
    return index


def cmd_rank(cfg: RunConfig) -> int:
    view0, view1 = _load_views(cfg)
    sets = {0: view0, 1: view1}
    heads = {h.view: h for h in _load_heads(cfg)}
    queries = sets[cfg.available_view]
    if not queries.records:
        raise EmptyQuerySet("no query records in the available view")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    index = _build_or_load_index(cfg, sets[cfg.missing_view], heads[cfg.missing_view])
    head_avail = heads[cfg.available_view]

    depth = min(max(cfg.k_list), index.size)
    ap_rows = []
    with open(cfg.out_dir / "rankings.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_id", "rank", "gallery_id", "gallery_label", "distance"])
        for record in queries.records:
            ranking = rank(index, head_avail.project(record.vector))
            for pos in range(depth):
                writer.writerow(
                    [
                        record.id,
                        pos + 1,
                        ranking.ids[pos],
                        ranking.labels[pos],
                        repr(float(ranking.distances[pos])),
                    ]
                )
            relevance = np.asarray(ranking.labels) == record.label
            ap_rows.append([average_precision_at_k(relevance, k) for k in cfg.k_list])

    ap_matrix = np.asarray(ap_rows)
    with open(cfg.out_dir / "map_curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "mean", "std"])
        for j, k in enumerate(cfg.k_list):
            writer.writerow([k, repr(float(ap_matrix[:, j].mean())), repr(float(ap_matrix[:, j].std()))])
    write_resolved_config(cfg)
    print(f"ranked {len(queries.records)} queries at depth {depth}")
    return EXIT_OK


def cmd_classify(cfg: RunConfig) -> int:
    view0, view1 = _load_views(cfg)
    scores0, scores1 = _load_scores(cfg)
    sets = {0: view0, 1: view1}
    score_sets = {0: scores0, 1: scores1}
    heads = {h.view: h for h in _load_heads(cfg)}
    queries = sets[cfg.available_view]
    if not queries.records:
        raise EmptyQuerySet("no query records in the available view")
    query_scores = score_sets[cfg.available_view]
    gallery_scores = score_sets[cfg.missing_view]
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    index = _build_or_load_index(cfg, sets[cfg.missing_view], heads[cfg.missing_view])
    head_avail = heads[cfg.available_view]

    rankings = [rank(index, head_avail.project(r.vector)) for r in queries.records]
    truths = [r.label for r in queries.records]

    def own_probs(record):
        vec = query_scores.by_id(record.id)
        if vec is None:
            raise MissingScore(record.id)
        return vec.probs

    no_fusion_preds = [int(np.argmax(own_probs(r))) for r in queries.records]
    paired_f1 = None
    if cfg.fully_paired:
        true_other = [gallery_scores.by_id(r.id) for r in queries.records]
        if all(v is not None for v in true_other):
            paired_preds = [
                int(np.argmax(product_fuse([own_probs(r), v.probs])))
                for r, v in zip(queries.records, true_other)
            ]
            paired_f1 = macro_f1(paired_preds, truths)

    table_rows = []
    for k in cfg.k_list:
        results = []
        for record, ranking in zip(queries.records, rankings):
            depth = min(k, len(ranking))
            donors = []
            for gallery_id in ranking.ids[:depth]:
                vec = gallery_scores.by_id(gallery_id)
                if vec is None:
                    raise MissingScore(gallery_id)
                donors.append(vec.probs)
            synthesized = mean_fuse(donors)
            fused = product_fuse([own_probs(record), synthesized])
            results.append(
                FusionResult(
                    query_id=record.id,
                    predicted_label=int(np.argmax(fused)),
                    fused_probs=fused,
                    query_scores=own_probs(record),
                    retrieved_scores=synthesized,
                    neighbor_ids=ranking.ids[:depth],
                    neighbor_distances=ranking.distances[:depth],
                )
            )
        write_fusion_results(results, cfg.out_dir / f"fusion_k{k}.csv")
        preds = [r.predicted_label for r in results]
        table_rows.append([k, macro_f1(preds, truths), micro_f1(preds, truths)])

    with open(cfg.out_dir / "f1_table.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["k", "fused_macro_f1", "fused_micro_f1", "no_fusion_macro_f1"]
        if paired_f1 is not None:
            header.append("fully_paired_macro_f1")
        writer.writerow(header)
        nf = macro_f1(no_fusion_preds, truths)
        for row in table_rows:
            out_row = [row[0], repr(row[1]), repr(row[2]), repr(nf)]
            if paired_f1 is not None:
                out_row.append(repr(paired_f1))
            writer.writerow(out_row)
    write_resolved_config(cfg)
    print(f"classified {len(queries.records)} queries over k in {list(cfg.k_list)}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    view0, view1 = _load_views(cfg)
    scores0, scores1 = _load_scores(cfg)
    sets = {0: view0, 1: view1}
    score_sets = {0: scores0, 1: scores1}
    experiment = ExperimentConfig(
        train=cfg.train_config(),
        k_list=cfg.k_list,
        n_folds=cfg.n_folds,
        fold_seed=cfg.seed,
        fully_paired=cfg.fully_paired,
    )
    report = run_experiment(
        sets[cfg.available_view],
        sets[cfg.missing_view],
        score_sets[cfg.available_view],
        score_sets[cfg.missing_view],
        experiment,
        jobs=cfg.jobs,
    )
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_report_text(report, cfg.out_dir / "report.txt")
    write_report_csv(report, cfg.out_dir / "report.csv")
    write_map_curve_csv(report, cfg.out_dir / "map_curve.csv")
    write_resolved_config(cfg)
    print(
        f"eval done: fused macro F1 {report.mean_f1:.4f} +/- {report.std_f1:.4f} "
        f"at k={report.k_star}, no-fusion {report.mean_no_fusion:.4f}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viewfill",
        description="missing-view multi-view classification pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "synth": (cmd_synth, "generate a synthetic two-view dataset"),
        "train": (cmd_train, "train projection heads on paired views"),
        "rank": (cmd_rank, "rank the gallery for every query and write mAP curves"),
        "classify": (cmd_classify, "classify queries with a simulated missing view"),
        "eval": (cmd_eval, "run the full cross-validation experiment"),
    }
    for name, (func, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--k", help="comma-separated retrieval depths")
        p.add_argument("--missing-view", dest="missing_view", type=int, choices=(0, 1))
        p.add_argument("--jobs", type=int, help="parallel fold workers")
        p.add_argument("--out", help="output directory")
        p.set_defaults(func=func)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ZeroVectorError, AllZeroProduct, DegenerateBatch, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ViewfillError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
