"""Command-line entry point: ``ebgcn <command> --config run.cfg [flags]``.

Config files hold one ``key = value`` pair per line; lines starting with
``#`` are comments. Values are read as JSON when they parse as JSON and as bare
strings otherwise. Flags override config keys. Every command writes a
``config.resolved`` copy of the settings it actually used into ``--out``.

Exit codes: 0 success, 1 config error, 2 data error, 3 runtime or numeric error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import cascade, datagen, evaluation, features, train
from .cascade import CascadeError, Dataset
from .model import forward_batch, GraphBatch

log = logging.getLogger("ebgcn")

OUTPUT_FILES = {
    "checkpoint": "checkpoint.bin",
    "history": "history.csv",
    "metrics": "metrics.json",
    "curve": "curve.csv",
    "robustness": "robustness.csv",
    "sweep": "sweep.csv",
}

SWEEP_RELATIONS = (1, 2, 3, 4, 5)
SWEEP_GAMMAS = tuple(round(0.1 * i, 1) for i in range(11))


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


# -- config ----------------------------------------------------------------


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def read_config(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    cfg = parse_config_text(text)
    base = Path(path).resolve().parent
    for key in ("data", "embeddings", "checkpoint", "labels", "input", "vocab"):
        if key in cfg and isinstance(cfg[key], str) and not Path(cfg[key]).is_absolute():
            cfg[key] = str(base / cfg[key])
    return cfg


def format_config(cfg: dict) -> str:
    return "".join(f"{k} = {json.dumps(v)}\n" for k, v in sorted(cfg.items()))


def _pick(cfg: dict, cls, **defaults):
    names = {f.name for f in fields(cls)}
    kwargs = dict(defaults)
    kwargs.update({k: v for k, v in cfg.items() if k in names})
    for k, v in list(kwargs.items()):
        if isinstance(v, list):
            kwargs[k] = tuple(v)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def gen_config(cfg: dict) -> datagen.GenConfig:
    return _pick(cfg, datagen.GenConfig)


def train_config(cfg: dict) -> train.TrainConfig:
    return _pick(cfg, train.TrainConfig)


def _require(cfg: dict, *keys):
    for k in keys:
        if k not in cfg:
            raise ConfigError(f"missing required setting {k!r}")


def _label_set(cfg: dict) -> cascade.LabelSet:
    name = cfg.get("label_set", "four")
    if isinstance(name, list):
        return cascade.LabelSet(tuple(name))
    if name == "four":
        return cascade.FOUR_CLASS
    if name == "three":
        return cascade.THREE_CLASS
    raise ConfigError(f"label_set must be 'four', 'three' or a list, got {name!r}")


# -- data plumbing ---------------------------------------------------------


def load_dataset(cfg: dict) -> Dataset:
    _require(cfg, "data")
    path = Path(cfg["data"])
    if not path.exists():
        raise DataError(f"data file {path} does not exist")
    try:
        return cascade.load_claims(path, "canonical-jsonl", _label_set(cfg), strict=cfg.get("strict", True))
    except CascadeError as exc:
        raise DataError(f"cascade-model: {exc}") from None


def split_indices(cfg: dict, dataset: Dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(train, val, test) indices for the configured split policy."""
    labels = dataset.labels()
    seed = int(cfg.get("split_seed", 0))
    policy = cfg.get("split", "holdout")
    try:
        if policy == "holdout":
            rest, test = evaluation.stratified_holdout(labels, float(cfg.get("test_fraction", 0.2)), seed)
        elif policy == "kfold":
            folds = evaluation.kfold_splits(labels, int(cfg.get("k", 5)), seed)
            rest, test = folds[int(cfg.get("fold", 0))]
        elif policy == "loeo":
            splits = evaluation.loeo_splits(dataset)
            event = cfg.get("event", splits[0][0])
            match = [s for s in splits if s[0] == event]
            if not match:
                raise ConfigError(f"event {event!r} not in dataset")
            _, rest, test = match[0]
        else:
            raise ConfigError(f"unknown split policy {policy!r}")
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"split: {exc}") from None
    tr, va = evaluation.stratified_holdout(labels[rest], float(cfg.get("val_fraction", 0.1)), seed + 1)
    if len(tr) == 0 or len(va) == 0 or len(test) == 0:
        raise ConfigError("a train, validation or test split is empty; adjust the split fractions")
    return rest[tr], rest[va], test


class FeatureSource:
    """Maps node uids of claims to feature rows for one run."""

    def __init__(self, cfg: dict, dataset: Dataset, train_idx, out_dir: Path | None = None):
        mode = cfg.get("features", "embeddings")
        self.mode = mode
        if mode == "embeddings":
            _require(cfg, "embeddings")
            try:
                self.table = features.read_embeddings(cfg["embeddings"])
            except (OSError, ValueError) as exc:
                raise DataError(f"text-features: {exc}") from None
            self.dim = next(iter(self.table.values())).size
            self.vocab = None
        elif mode == "tfidf":
            vocab_path = cfg.get("vocab")
            if vocab_path and Path(vocab_path).exists():
                self.vocab = features.Vocabulary.from_json(Path(vocab_path).read_text())
            else:
                texts = [nd.text for i in train_idx for nd in dataset.claims[i].nodes]
                try:
                    self.vocab = features.fit_vocabulary(texts, int(cfg.get("max_terms", features.MAX_TERMS)))
                except ValueError as exc:
                    raise DataError(f"text-features: {exc}") from None
            if out_dir is not None:
                (out_dir / "vocab.json").write_text(self.vocab.to_json())
            self.dim = len(self.vocab)
            self.table = None
        else:
            raise ConfigError(f"features must be 'tfidf' or 'embeddings', got {mode!r}")
        self._cache: dict[tuple[str, str], np.ndarray] = {}
        self.missing = 0
        if self.table is None:
            for claim in dataset.claims:
                mat = features.transform(self.vocab, [nd.text for nd in claim.nodes])
                for nd, row in zip(claim.nodes, mat):
                    self._cache[(claim.id, nd.uid)] = row

    def __call__(self, claim_id: str, uid: str) -> np.ndarray:
        if self.table is not None:
            vec = self.table.get(uid)
            if vec is None:
                self.missing += 1
                return np.zeros(self.dim)
            return vec
        return self._cache[(claim_id, uid)]


def make_samples(dataset: Dataset, idx, feature_of, budget=None):
    labels = dataset.labels()
    claims = [dataset.claims[i] for i in idx]
    try:
        graphs = evaluation.truncated_graphs(claims, feature_of, budget)
    except CascadeError as exc:
        raise DataError(f"cascade-model: {exc}") from None
    return list(zip(graphs, labels[np.asarray(idx, dtype=np.int64)].tolist()))


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg.get("out", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_resolved(out: Path, cfg: dict) -> None:
    (out / "config.resolved").write_text(format_config(cfg))


def _fit(tcfg: train.TrainConfig, dataset: Dataset, feature_of, tr, va):
    try:
        return train.fit(make_samples(dataset, tr, feature_of), make_samples(dataset, va, feature_of),
                         tcfg, len(dataset.label_set))
    except train.TrainingDiverged:
        raise
    except ValueError as exc:
        raise DataError(f"trainer: {exc}") from None


# -- commands --------------------------------------------------------------


def cmd_generate(cfg: dict) -> int:
    _require(cfg, "seed")
    gcfg = gen_config(cfg)
    out = _out_dir(cfg)
    data = datagen.generate(gcfg)
    cascade.write_claims(data.dataset, out / "dataset.jsonl")
    features.write_embeddings(out / "embeddings.tsv", data.features)
    _write_resolved(out, {**cfg, **{k: list(v) if isinstance(v, tuple) else v for k, v in gcfg.to_dict().items()}})
    counts = {lbl: 0 for lbl in gcfg.labels}
    for c in data.dataset.claims:
        counts[c.label] += 1
    nodes = sum(c.n for c in data.dataset.claims)
    print(f"generated {len(data.dataset)} claims, {nodes} nodes, dim {gcfg.dim}: "
          + ", ".join(f"{k}={v}" for k, v in counts.items()))
    return 0


def cmd_train(cfg: dict) -> int:
    _require(cfg, "seed")
    tcfg = train_config(cfg)
    out = _out_dir(cfg)
    dataset = load_dataset(cfg)
    tr, va, te = split_indices(cfg, dataset)
    feats = FeatureSource(cfg, dataset, tr, out)
    result = _fit(tcfg, dataset, feats, tr, va)
    train.save_checkpoint(out / OUTPUT_FILES["checkpoint"], result, {"train": asdict(tcfg)})
    (out / OUTPUT_FILES["history"]).write_text(result.history_csv())
    _write_resolved(out, {**cfg, **asdict(tcfg)})
    print(f"trained {result.stopped_epoch} epochs; best validation loss {result.best_val_loss:.6f} "
          f"at epoch {result.best_epoch}")
    return 0


def _load_model(cfg: dict):
    ckpt = cfg.get("checkpoint")
    if ckpt is None and "out" in cfg:
        ckpt = str(Path(cfg["out"]) / OUTPUT_FILES["checkpoint"])
    if ckpt is None or not Path(ckpt).exists():
        raise ConfigError(f"checkpoint {ckpt} not found")
    try:
        return train.load_checkpoint(ckpt)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"checkpoint {ckpt}: {exc}") from None


def _eval_indices(cfg, dataset):
    tr, va, te = split_indices(cfg, dataset)
    which = cfg.get("eval_on", "test")
    return {"test": te, "train": tr, "val": va, "all": np.arange(len(dataset))}[which], tr


def _features_for_eval(cfg, dataset, tr):
    if cfg.get("features", "embeddings") == "tfidf" and "vocab" not in cfg:
        ck = Path(cfg.get("checkpoint") or Path(cfg.get("out", ".")) / OUTPUT_FILES["checkpoint"])
        vocab = ck.parent / "vocab.json"
        if vocab.exists():
            cfg = {**cfg, "vocab": str(vocab)}
    return FeatureSource(cfg, dataset, tr)


def evaluate_config(cfg: dict, budget=None) -> evaluation.MetricReport:
    params, mcfg, _ = _load_model(cfg)
    dataset = load_dataset(cfg)
    idx, tr = _eval_indices(cfg, dataset)
    feats = _features_for_eval(cfg, dataset, tr)
    samples = make_samples(dataset, idx, feats, budget)
    graphs = [g for g, _ in samples]
    if graphs and graphs[0].x.shape[1] != mcfg.in_dim:
        raise DataError(f"feature dimension {graphs[0].x.shape[1]} does not match checkpoint ({mcfg.in_dim})")
    return evaluation.evaluate_graphs(graphs, [y for _, y in samples], params, mcfg, dataset.label_set.names)


def cmd_evaluate(cfg: dict) -> int:
    out = _out_dir(cfg)
    rep = evaluate_config(cfg)
    (out / OUTPUT_FILES["metrics"]).write_text(evaluation.report_json(rep.to_dict()) + "\n")
    if cfg.get("dump_edges"):
        _dump_edges(cfg, out)
    _write_resolved(out, cfg)
    print(f"accuracy {rep.accuracy:.4f}  macro-F1 {rep.macro_f1:.4f}  weighted-F1 {rep.weighted_f1:.4f}")
    return 0


def _dump_edges(cfg: dict, out: Path) -> None:
    from .model import edge_weight_dump

    params, mcfg, _ = _load_model(cfg)
    dataset = load_dataset(cfg)
    idx, tr = _eval_indices(cfg, dataset)
    feats = _features_for_eval(cfg, dataset, tr)
    samples = make_samples(dataset, idx, feats)
    with open(out / "edges.tsv", "w") as fh:
        fh.write("claim_id\tdirection\tlayer\ti\tj\tgate\n")
        for i in range(0, len(samples), 64):
            batch = GraphBatch.from_graphs([g for g, _ in samples[i:i + 64]])
            fh.write(edge_weight_dump(forward_batch(batch, params, mcfg, "eval")))


def parse_budgets(text) -> list[float]:
    items = text if isinstance(text, list) else str(text).split(",")
    values = []
    for item in items:
        s = str(item).strip().lower()
        values.append(math.inf if s in ("inf", "infinity", "∞") else float(s))
    if not values:
        raise ConfigError("empty budget list")
    if any(b > a for a, b in zip(values[1:], values)):
        raise ConfigError("budget list must be ascending")
    return values


def cmd_early_detect(cfg: dict) -> int:
    _require(cfg, "budget_list")
    out = _out_dir(cfg)
    kind = cfg.get("budget_kind", "tweets")
    try:
        budgets = [evaluation.Budget(kind, v) for v in parse_budgets(cfg["budget_list"])]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    curve = [(b, evaluate_config(cfg, b)) for b in budgets]
    (out / OUTPUT_FILES["curve"]).write_text(evaluation.curve_csv(curve))
    _write_resolved(out, cfg)
    for b, rep in curve:
        print(f"{b.label():>20}  accuracy {rep.accuracy:.4f}")
    return 0


def cmd_robustness(cfg: dict) -> int:
    _require(cfg, "seed")
    gcfg = gen_config({**cfg, "seed": cfg.get("fixture_seed", datagen.GenConfig.seed)})
    tcfg = train_config(cfg)
    seeds = tuple(cfg.get("seeds", [int(cfg["seed"]) + i for i in range(5)]))
    rhos = tuple(float(r) for r in cfg.get("rhos", [0.0, 0.1, 0.2, 0.3]))
    out = _out_dir(cfg)
    rcfg = evaluation.RobustnessConfig(gcfg, tcfg, rhos, seeds)
    try:
        fx = evaluation.make_fixture(gcfg, float(cfg.get("test_fraction", 0.2)), float(cfg.get("val_fraction", 0.1)),
                                     int(cfg.get("split_seed", 0)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    report = evaluation.robustness_experiment(rcfg, fx)
    (out / OUTPUT_FILES["robustness"]).write_text(report.to_csv())
    _write_resolved(out, cfg)
    for rho in rhos:
        print(f"rho={rho:g}  ebgcn acc {report.mean_accuracy('ebgcn', rho):.4f} drop {report.mean_drop('ebgcn', rho):+.4f}"
              f"  ablation acc {report.mean_accuracy('ablation', rho):.4f} drop {report.mean_drop('ablation', rho):+.4f}")
    return 0


def cmd_sweep(cfg: dict) -> int:
    """Accuracy over the T x gamma grid, one training run per cell."""
    _require(cfg, "seed")
    base = train_config(cfg)
    out = _out_dir(cfg)
    dataset = load_dataset(cfg)
    tr, va, te = split_indices(cfg, dataset)
    feats = FeatureSource(cfg, dataset, tr, out)
    relations = [int(t) for t in cfg.get("sweep_relations", list(SWEEP_RELATIONS))]
    gammas = [float(g) for g in cfg.get("sweep_gammas", list(SWEEP_GAMMAS))]
    test = make_samples(dataset, te, feats)
    rows = ["relations,gamma,accuracy,macro_f1,best_epoch,status"]
    failed = 0
    for T in relations:
        for g in gammas:
            try:
                tcfg = replace(base, relations=T, gamma=g)
                result = _fit(tcfg, dataset, feats, tr, va)
                rep = evaluation.evaluate_graphs([s[0] for s in test], [s[1] for s in test], result.params,
                                                 result.model_config, dataset.label_set.names)
                rows.append(f"{T},{g},{rep.accuracy!r},{rep.macro_f1!r},{result.best_epoch},ok")
            except (train.TrainingDiverged, DataError, ValueError) as exc:
                failed += 1
                log.error("sweep cell T=%s gamma=%s failed: %s", T, g, exc)
                rows.append(f"{T},{g},,,,failed")
    (out / OUTPUT_FILES["sweep"]).write_text("\n".join(rows) + "\n")
    _write_resolved(out, {**cfg, "sweep_relations": relations, "sweep_gammas": gammas})
    print(f"sweep: {len(relations) * len(gammas)} cells, {failed} failed")
    return 3 if failed else 0


def cmd_convert(cfg: dict) -> int:
    _require(cfg, "input")
    src = Path(cfg["input"])
    out = _out_dir(cfg)
    target = out / cfg.get("output", "dataset.jsonl")
    labels = _label_set(cfg)
    fmt = cfg.get("from", "ma-tree")
    try:
        if fmt == "canonical-jsonl" or src.is_file():
            ds = cascade.load_claims(src, "canonical-jsonl", labels, strict=True)
            cascade.write_claims(ds, target)
            print(f"converted {len(ds)} claims (canonical input)")
            return 0
        if not src.is_dir():
            raise DataError(f"{src} does not exist")
        report = cascade.convert_ma_trees(src, target, cfg.get("labels"), labels, strict=bool(cfg.get("strict", False)))
    except CascadeError as exc:
        raise DataError(str(exc)) from None
    for path, lineno, msg in report.malformed:
        print(f"{path}:{lineno}: {msg}", file=sys.stderr)
    for cid, why in report.rejected:
        print(f"rejected {cid}: {why}", file=sys.stderr)
    print(f"converted {report.claims} claims; {len(report.malformed)} malformed lines; "
          f"{len(report.rejected)} rejected; {len(report.imputed_times)} with imputed times")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "early-detect": cmd_early_detect,
    "robustness": cmd_robustness,
    "sweep": cmd_sweep,
    "convert": cmd_convert,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ebgcn", description="Edge-enhanced Bayesian GCN experiments")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="key = value settings file")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out")
    ap.add_argument("--features", choices=["tfidf", "embeddings"])
    ap.add_argument("--gamma", type=float)
    ap.add_argument("--T", type=int, dest="relations")
    ap.add_argument("--lr", type=float, dest="learning_rate")
    ap.add_argument("--budget-list", dest="budget_list")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve(args: argparse.Namespace) -> dict:
    cfg = read_config(args.config) if args.config else {}
    for key in ("seed", "out", "features", "gamma", "relations", "learning_rate", "budget_list"):
        val = getattr(args, key)
        if val is not None:
            cfg[key] = val
    cfg["threads"] = args.threads
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        with threadpool_limits(limits=max(1, args.threads)):
            return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (train.TrainingDiverged, FloatingPointError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
