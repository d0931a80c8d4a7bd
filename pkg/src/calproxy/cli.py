"""Experiment driver: train, ablate, noise sweeps, and checkpoint evaluation.

Configs are JSON with exhaustive validation (unknown keys rejected); CLI
flags override file values, and a profile switch selects desk-scale or
full-scale defaults. Every run writes `result.json`, `metrics.csv`, and a
`checkpoint.json` into its own output directory, and runs are exactly
reproducible from their echoed config.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

import argparse
import copy
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datalab import ClusterSpec, Dataset, epoch_batches, gen_clusters, load_features, with_noise
from .errors import ConfigError, DataError, NumericError
from .evaluator import EvalReport, build_report, export_embeddings
from .global_center import GlobalCenter
from .losses import KINDS, BatchView, LossSpec, loss_and_grad
from .model import AdamState, Embedder, adam_step, init_adam
from .similarity import ProxyBank

DESK_DEFAULTS = {
    "dataset": {
        "synthetic": {
            "n_classes": 20,
            "subclusters_per_class": 2,
            "input_dim": 32,
            "samples_per_class": 100,
            "intra_spread": 0.5,
            "subcluster_separation": 4.0,
            "seed": 7,
        },
        "features_csv": None,
        "train_fraction": 0.5,
        "noise_ratio": 0.0,
        "noise_seed": None,
    },
    "model": {"hidden_dim": 64, "embed_dim": 16},
    "loss": {
        "kind": "cp_proxy_anchor",
        "alpha": 32.0,
        "margin": 0.1,
        "calibration_weight": 1.0,
        "st_scale": 20.0,
        "st_margin": 0.01,
        "proxies_per_class": 3,
    },
    "center": {"capacity": 30, "start_epoch": 5},
    "train": {
        "epochs": 30,
        "batch_size": 150,
        "lr": 1e-3,
        "proxy_lr_multiplier": 100.0,
        "seed": 0,
        "eval_every": 5,
    },
    "eval": {"recall_ks": [1, 2, 4, 8], "export_embeddings": False},
    "output_dir": "runs/run",
}

# full-scale settings; dataset choice stays whatever the config says
PAPER_OVERRIDES = {
    "model": {"hidden_dim": 256, "embed_dim": 512},
    "center": {"start_epoch": 12},
    "train": {"epochs": 60},
}

SWEEPABLE = {
    "capacity": (("center", "capacity"), int),
    "start_epoch": (("center", "start_epoch"), int),
    "proxies_per_class": (("loss", "proxies_per_class"), int),
    "calibration_weight": (("loss", "calibration_weight"), float),
    "kind": (("loss", "kind"), str),
}


def _require_int(section, key, value, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{section}.{key} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{section}.{key} must be >= {minimum}, got {value}")
    return value


def _require_number(section, key, value, minimum=None, strict=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{key} must be a number, got {value!r}")
    v = float(value)
    if minimum is not None and (v <= minimum if strict else v < minimum):
        op = ">" if strict else ">="
        raise ConfigError(f"{section}.{key} must be {op} {minimum}, got {v}")
    return v


def _merge_section(defaults: dict, override: dict, section: str) -> dict:
    merged = copy.deepcopy(defaults)
    for key, value in override.items():
        if key not in defaults:
            raise ConfigError(f"unknown key {section}.{key}")
        if isinstance(defaults[key], dict) and isinstance(value, dict):
            merged[key] = _merge_section(defaults[key], value, f"{section}.{key}")
        else:
            merged[key] = value
    return merged


@dataclass
class RunConfig:
    """Validated run configuration; `data` always carries every key."""

    data: dict

    @classmethod
    def from_dict(cls, raw: dict, profile: str = "desk") -> "RunConfig":
        if profile not in ("desk", "paper"):
            raise ConfigError(f"unknown profile {profile!r}")
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        defaults = copy.deepcopy(DESK_DEFAULTS)
        if profile == "paper":
            for section, values in PAPER_OVERRIDES.items():
                defaults[section].update(values)
        cfg = {}
        for section, section_defaults in defaults.items():
            if section == "output_dir":
                continue
            override = raw.get(section, {})
            if not isinstance(override, dict):
                raise ConfigError(f"section {section!r} must be an object")
            cfg[section] = _merge_section(section_defaults, override, section)
        for key in raw:
            if key not in defaults:
                raise ConfigError(f"unknown key {key!r}")
        cfg["output_dir"] = raw.get("output_dir", defaults["output_dir"])
        if not isinstance(cfg["output_dir"], str) or not cfg["output_dir"]:
            raise ConfigError("output_dir must be a nonempty string")
        config = cls(cfg)
        config.validate()
        return config

    def validate(self) -> None:
        cfg = self.data
        ds = cfg["dataset"]
        if (ds["synthetic"] is None) == (ds["features_csv"] is None):
            raise ConfigError("dataset needs exactly one of 'synthetic' or 'features_csv'")
        if ds["synthetic"] is not None:
            self.cluster_spec()  # raises ConfigError on bad values
        elif not isinstance(ds["features_csv"], str):
            raise ConfigError("dataset.features_csv must be a path string")
        tf = _require_number("dataset", "train_fraction", ds["train_fraction"])
        if not (0.0 < tf < 1.0):
            raise ConfigError("dataset.train_fraction must be in (0, 1)")
        nr = _require_number("dataset", "noise_ratio", ds["noise_ratio"], minimum=0.0)
        if nr >= 1.0:
            raise ConfigError("dataset.noise_ratio must be in [0, 1)")
        if ds["noise_seed"] is not None:
            _require_int("dataset", "noise_seed", ds["noise_seed"], minimum=0)

        _require_int("model", "hidden_dim", cfg["model"]["hidden_dim"], minimum=1)
        _require_int("model", "embed_dim", cfg["model"]["embed_dim"], minimum=1)

        try:
            self.loss_spec()
        except ValueError as exc:
            raise ConfigError(f"loss: {exc}") from None

        _require_int("center", "capacity", cfg["center"]["capacity"], minimum=1)
        _require_int("center", "start_epoch", cfg["center"]["start_epoch"], minimum=0)

        tr = cfg["train"]
        _require_int("train", "epochs", tr["epochs"], minimum=0)
        _require_int("train", "batch_size", tr["batch_size"], minimum=1)
        _require_number("train", "lr", tr["lr"], minimum=0.0, strict=True)
        _require_number("train", "proxy_lr_multiplier", tr["proxy_lr_multiplier"], minimum=0.0, strict=True)
        _require_int("train", "seed", tr["seed"], minimum=0)
        _require_int("train", "eval_every", tr["eval_every"], minimum=1)

        ev = cfg["eval"]
        if (not isinstance(ev["recall_ks"], list)) or not ev["recall_ks"]:
            raise ConfigError("eval.recall_ks must be a nonempty list")
        for k in ev["recall_ks"]:
            if isinstance(k, bool) or not isinstance(k, int) or k < 1:
                raise ConfigError(f"eval.recall_ks entries must be integers >= 1, got {k!r}")
        if not isinstance(ev["export_embeddings"], bool):
            raise ConfigError("eval.export_embeddings must be a boolean")

    def cluster_spec(self) -> ClusterSpec:
        return ClusterSpec(**self.data["dataset"]["synthetic"])

    def loss_spec(self) -> LossSpec:
        return LossSpec(**self.data["loss"])

    def canonical(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def derived(self, updates: dict, output_dir: str) -> "RunConfig":
        """Copy with dotted-path overrides applied, revalidated."""
        cfg = copy.deepcopy(self.data)
        for (section, key), value in updates.items():
            cfg[section][key] = value
        cfg["output_dir"] = output_dir
        return RunConfig.from_dict(cfg)


@dataclass
class RunResult:
    """Everything one training run produced."""

    config_echo: str
    per_epoch_loss: list
    eval_series: list
    checkpoint_path: str
    wall_clock_sec: float
    noise_flips: int = 0

    @property
    def final_report(self) -> EvalReport:
        return self.eval_series[-1]

    def to_dict(self) -> dict:
        return {
            "config": json.loads(self.config_echo),
            "per_epoch_loss": self.per_epoch_loss,
            "eval_series": [r.to_dict() for r in self.eval_series],
            "checkpoint_path": self.checkpoint_path,
            "wall_clock_sec": self.wall_clock_sec,
            "noise_flips": self.noise_flips,
        }


def _build_dataset(config: RunConfig) -> Dataset:
    ds = config.data["dataset"]
    if ds["features_csv"] is not None:
        dataset = load_features(ds["features_csv"])
    else:
        dataset = gen_clusters(config.cluster_spec(), ds["train_fraction"])
    if ds["noise_ratio"] > 0.0:
        seed = ds["noise_seed"]
        if seed is None:
            seed = config.data["train"]["seed"] + 1000
        dataset = with_noise(dataset, ds["noise_ratio"], seed)
    return dataset


def _evaluate_state(config: RunConfig, dataset: Dataset, embedder: Embedder,
                    bank: ProxyBank, completed_epochs: int) -> EvalReport:
    test_embeddings, _ = embedder.forward(dataset.features[dataset.test_idx])
    test_labels = dataset.true_labels[dataset.test_idx]

    # deviation diagnostic on the unit-sphere geometry the losses optimize
    train_embeddings, _ = embedder.forward(dataset.features[dataset.train_idx])
    train_hat = train_embeddings / np.linalg.norm(train_embeddings, axis=1, keepdims=True)
    train_labels = dataset.train_labels[dataset.train_idx]
    groups = {}
    for c in range(bank.n_classes):
        mask = train_labels == c
        if np.any(mask):
            groups[c] = train_hat[mask]
    bank_hat = ProxyBank(bank.proxies / np.linalg.norm(bank.proxies, axis=-1, keepdims=True))

    ks = sorted(set(config.data["eval"]["recall_ks"]) | {1})
    return build_report(
        completed_epochs,
        test_embeddings,
        test_labels,
        ks,
        deviation_groups=groups,
        bank=bank_hat,
        metadata={
            "seed": config.data["train"]["seed"],
            "loss_kind": config.data["loss"]["kind"],
        },
    )


def _save_checkpoint(path: Path, config: RunConfig, embedder: Embedder, bank: ProxyBank,
                     adam: AdamState, gc: GlobalCenter, completed_epochs: int,
                     loss_history: list, eval_series: list) -> None:
    state = {
        "completed_epochs": completed_epochs,
        "model": embedder.to_state(),
        "proxies": bank.proxies.tolist(),
        "adam": adam.to_state(),
        "center": gc.to_state(),
        "loss_history": loss_history,
        "eval_series": [r.to_dict() for r in eval_series],
        "config": config.data,
    }
    path.write_text(json.dumps(state), encoding="utf-8")


def load_checkpoint(path) -> dict:
    try:
        state = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"checkpoint {path} is not valid JSON: {exc}") from None
    for key in ("completed_epochs", "model", "proxies", "adam", "center", "config"):
        if key not in state:
            raise DataError(f"checkpoint {path} is missing {key!r}")
    return state


def run_training(config: RunConfig, resume_path=None) -> RunResult:
    """Full training loop: embed, score against composite class centers,
    step Adam, refresh the global center, and evaluate on the configured
    cadence."""
    started = time.perf_counter()
    cfg = config.data
    tr = cfg["train"]
    seed = tr["seed"]

    dataset = _build_dataset(config)
    n_train = dataset.train_idx.size
    if tr["batch_size"] > n_train:
        raise ConfigError(f"train.batch_size {tr['batch_size']} exceeds training split size {n_train}")
    n_bank_classes = dataset.n_train_classes
    embed_dim = cfg["model"]["embed_dim"]
    spec = config.loss_spec()

    if resume_path is not None:
        state = load_checkpoint(resume_path)
        embedder = Embedder.from_state(state["model"])
        bank = ProxyBank(np.asarray(state["proxies"], dtype=np.float64))
        adam = AdamState.from_state(state["adam"])
        gc = GlobalCenter.from_state(state["center"])
        start_epoch = state["completed_epochs"]
        loss_history = list(state["loss_history"])
        eval_series = [EvalReport.from_dict(d) for d in state["eval_series"]]
    else:
        embedder = Embedder(
            dataset.input_dim, cfg["model"]["hidden_dim"], embed_dim,
            np.random.default_rng(np.random.SeedSequence([seed, 10])),
        )
        bank = ProxyBank.random_unit(
            n_bank_classes, spec.proxies_per_class, embed_dim,
            np.random.default_rng(np.random.SeedSequence([seed, 11])),
        )
        gc = GlobalCenter(n_bank_classes, embed_dim,
                          cfg["center"]["capacity"], cfg["center"]["start_epoch"])
        adam = init_adam({**embedder.params(), "proxies": bank.proxies},
                         tr["lr"], proxy_lr_multiplier=tr["proxy_lr_multiplier"])
        start_epoch = 0
        loss_history = []
        eval_series = []

    epochs = tr["epochs"]
    eval_every = tr["eval_every"]

    for epoch in range(start_epoch, epochs):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 2, epoch]))
        active = gc.is_active(epoch)
        batch_losses = []
        for b, idx in enumerate(epoch_batches(dataset.train_idx, tr["batch_size"], rng)):
            embeddings, cache = embedder.forward(dataset.features[idx])
            batch = BatchView(embeddings, dataset.train_labels[idx])
            value, grads = loss_and_grad(batch, bank, gc, spec, active)
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss {value!r} at epoch {epoch}, batch {b}")
            param_grads = embedder.backward(cache, grads.d_embeddings)
            param_grads["proxies"] = grads.d_proxies
            params = {**embedder.params(), "proxies": bank.proxies}
            new_params = adam_step(adam, params, param_grads)
            embedder.set_params({k: new_params[k] for k in ("w1", "b1", "w2", "b2")})
            bank = ProxyBank(new_params["proxies"])
            for row, sample_idx in enumerate(idx):
                gc.push(int(dataset.train_labels[sample_idx]), embeddings[row])
            batch_losses.append(value)
        loss_history.append(float(np.mean(batch_losses)))
        completed = epoch + 1
        if completed % eval_every == 0 or completed == epochs:
            eval_series.append(_evaluate_state(config, dataset, embedder, bank, completed))

    if not eval_series:
        eval_series.append(_evaluate_state(config, dataset, embedder, bank, start_epoch))

    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out_dir / "checkpoint.json"
    _save_checkpoint(checkpoint_path, config, embedder, bank, adam, gc,
                     max(epochs, start_epoch), loss_history, eval_series)

    result = RunResult(
        config_echo=config.canonical(),
        per_epoch_loss=loss_history,
        eval_series=eval_series,
        checkpoint_path=str(checkpoint_path),
        wall_clock_sec=time.perf_counter() - started,
        noise_flips=int(dataset.flipped_idx.size),
    )
    (out_dir / "result.json").write_text(
        json.dumps(result.to_dict(), indent=2), encoding="utf-8"
    )
    _write_metrics_csv(out_dir / "metrics.csv", result)
    if cfg["eval"]["export_embeddings"]:
        test_embeddings, _ = embedder.forward(dataset.features[dataset.test_idx])
        export_embeddings(test_embeddings, dataset.true_labels[dataset.test_idx],
                          out_dir / "embeddings.csv")
    return result


def _fmt(value) -> str:
    if value is None:
        return ""
    return f"{value:.17g}"


def _write_metrics_csv(path: Path, result: RunResult) -> None:
    lines = ["epoch,loss,recall_at_1,map_at_r,mean_deviation"]
    losses = result.per_epoch_loss
    for report in result.eval_series:
        loss = losses[report.epoch - 1] if 0 < report.epoch <= len(losses) else float("nan")
        lines.append(",".join([
            str(report.epoch),
            _fmt(loss),
            _fmt(report.recall_at[1]),
            _fmt(report.map_at_r),
            _fmt(report.mean_deviation),
        ]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_config_file(path, profile: str) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return RunConfig.from_dict(raw, profile=profile)


def _final_row(result: RunResult) -> dict:
    report = result.final_report
    return {
        "recall_at_1": report.recall_at[1],
        "map_at_r": report.map_at_r,
        "mean_deviation": report.mean_deviation,
        "loss": result.per_epoch_loss[-1] if result.per_epoch_loss else float("nan"),
    }


def cmd_ablate(config: RunConfig, param: str, values: list) -> list:
    """One run per sweep value, shared seed; returns and writes a metrics table."""
    if param not in SWEEPABLE:
        raise ConfigError(f"unknown sweep parameter {param!r}, expected one of {sorted(SWEEPABLE)}")
    path, _cast = SWEEPABLE[param]
    base_out = Path(config.data["output_dir"])
    rows = []
    for value in values:
        sub = config.derived({path: value}, str(base_out / f"sweep_{param}_{value}"))
        result = run_training(sub)
        rows.append({"param": param, "value": value, **_final_row(result)})
    base_out.mkdir(parents=True, exist_ok=True)
    table = ["param,value,recall_at_1,map_at_r,mean_deviation,loss"]
    for r in rows:
        table.append(",".join([
            r["param"], str(r["value"]), _fmt(r["recall_at_1"]),
            _fmt(r["map_at_r"]), _fmt(r["mean_deviation"]), _fmt(r["loss"]),
        ]))
    (base_out / "sweep.csv").write_text("\n".join(table) + "\n", encoding="utf-8")
    return rows


def cmd_noise(config: RunConfig, ratios: list) -> list:
    """Train the configured family with and without calibration at each noise
    ratio, evaluating against clean test labels."""
    for r in ratios:
        if not (0.0 <= r < 1.0):
            raise ConfigError(f"noise ratio {r} outside [0, 1)")
    family = config.loss_spec().family
    base_out = Path(config.data["output_dir"])
    rows = []
    for ratio in ratios:
        for kind in (family, "cp_" + family):
            tag = f"noise_{int(round(ratio * 100))}pct_{kind}"
            sub = config.derived(
                {("dataset", "noise_ratio"): ratio, ("loss", "kind"): kind},
                str(base_out / tag),
            )
            result = run_training(sub)
            rows.append({"ratio": ratio, "kind": kind,
                         "flips": result.noise_flips, **_final_row(result)})
    base_out.mkdir(parents=True, exist_ok=True)
    table = ["ratio,kind,flips,recall_at_1,map_at_r,mean_deviation,loss"]
    for r in rows:
        table.append(",".join([
            _fmt(r["ratio"]), r["kind"], str(r["flips"]), _fmt(r["recall_at_1"]),
            _fmt(r["map_at_r"]), _fmt(r["mean_deviation"]), _fmt(r["loss"]),
        ]))
    (base_out / "noise.csv").write_text("\n".join(table) + "\n", encoding="utf-8")
    return rows


def cmd_eval(checkpoint_path, data_path) -> dict:
    """Score a checkpointed model on a feature CSV's test split."""
    state = load_checkpoint(checkpoint_path)
    embedder = Embedder.from_state(state["model"])
    bank = ProxyBank(np.asarray(state["proxies"], dtype=np.float64))
    dataset = load_features(data_path)
    if dataset.input_dim != embedder.dims[0]:
        raise DataError(
            f"feature width {dataset.input_dim} does not match model input {embedder.dims[0]}"
        )
    config = RunConfig.from_dict(state["config"])
    test_embeddings, _ = embedder.forward(dataset.features[dataset.test_idx])
    ks = sorted(set(config.data["eval"]["recall_ks"]) | {1})
    report = build_report(
        state["completed_epochs"],
        test_embeddings,
        dataset.true_labels[dataset.test_idx],
        ks,
        metadata={"checkpoint": str(checkpoint_path), "data": str(data_path),
                  "bank_classes": bank.n_classes},
    )
    return report.to_dict()


def _parse_values(raw: str, cast):
    values = []
    for piece in raw.split(","):
        piece = piece.strip()
        if not piece:
            raise ConfigError("empty value in sweep list")
        try:
            values.append(cast(piece))
        except ValueError:
            raise ConfigError(f"cannot parse sweep value {piece!r}") from None
    return values


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="calproxy",
                                     description="calibrated-proxy metric learning experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("train", "ablate", "noise"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--profile", choices=("desk", "paper"), default="desk")
        p.add_argument("--out", default=None, help="override output_dir")
        if name == "train":
            p.add_argument("--resume", default=None, help="checkpoint to resume from")
        elif name == "ablate":
            p.add_argument("--sweep", required=True, metavar="PARAM=V1,V2,...")
        else:
            p.add_argument("--ratios", required=True, metavar="R1,R2,...")

    p = sub.add_parser("eval")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    return parser


def _configure(args) -> RunConfig:
    config = _load_config_file(args.config, args.profile)
    overrides = {}
    if args.seed is not None:
        overrides[("train", "seed")] = args.seed
    out_dir = args.out if args.out is not None else config.data["output_dir"]
    if overrides or args.out is not None:
        config = config.derived(overrides, out_dir)
    return config


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "train":
            config = _configure(args)
            result = run_training(config, resume_path=args.resume)
            row = _final_row(result)
            print(f"run complete: epochs={len(result.per_epoch_loss)} "
                  f"recall@1={row['recall_at_1']:.4f} map@r={row['map_at_r']:.4f} "
                  f"-> {config.data['output_dir']}")
        elif args.command == "ablate":
            config = _configure(args)
            if "=" not in args.sweep:
                raise ConfigError("--sweep must look like param=v1,v2,...")
            param, raw_values = args.sweep.split("=", 1)
            param = param.strip()
            if param not in SWEEPABLE:
                raise ConfigError(
                    f"unknown sweep parameter {param!r}, expected one of {sorted(SWEEPABLE)}")
            values = _parse_values(raw_values, SWEEPABLE[param][1])
            rows = cmd_ablate(config, param, values)
            for r in rows:
                print(f"{param}={r['value']}: recall@1={r['recall_at_1']:.4f} "
                      f"map@r={r['map_at_r']:.4f}")
        elif args.command == "noise":
            config = _configure(args)
            ratios = _parse_values(args.ratios, float)
            rows = cmd_noise(config, ratios)
            for r in rows:
                print(f"ratio={r['ratio']:.2f} kind={r['kind']}: "
                      f"recall@1={r['recall_at_1']:.4f} flips={r['flips']}")
        elif args.command == "eval":
            report = cmd_eval(args.checkpoint, args.data)
            print(json.dumps(report, indent=2))
        else:  # pragma: no cover - argparse enforces the choices
            raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
