"""Experiment configuration: INI file with sections, CLI flags override.

A config file fully determines an experiment; rerunning the same file byte
for byte reproduces every metric. Every field has a desk-scale default so
`fedmark embed` works out of the box on synthetic data.
"""

import configparser
import os
from dataclasses import dataclass, field, replace

from fedmark.data import DirichletNonIID, IID, PartitionSpec, PathologicalNonIID
from fedmark.errors import ConfigurationError
from fedmark.fl.core import FLConfig
from fedmark.trigger import validate_patch_params
from fedmark.watermark import DEFAULT_EPSILON


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "synth"  # "synth" | "idx"
    k: int = 10
    per_class: int = 1000
    test_per_class: int = 100
    height: int = 32
    width: int = 32
    seed: int = 100
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    resize_height: int = 0  # 0 = keep native size
    resize_width: int = 0


@dataclass(frozen=True)
class TriggerSpec:
    mu: int = 4
    nu: int = 4
    t: int = 10
    key_seed: int = 11
    pattern_seed: int = 21
    verify_patterns: int = 100  # patterns per class in the held-back set
    verify_pattern_seed: int = 22


@dataclass(frozen=True)
class WatermarkSpec:
    epsilon: float = DEFAULT_EPSILON
    gamma: float | None = None  # explicit override of the derived threshold
    subset_size: int | None = None  # None -> smallest workable subset


@dataclass(frozen=True)
class AttackSpec:
    prune_rates: tuple[float, ...] = (0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50)
    quant_bits: tuple[int, ...] = (2, 3, 4, 5, 6, 7, 8)
    finetune_epochs: int = 30
    finetune_lr: float = 0.01
    finetune_per_class: int = 200
    finetune_seed: int = 3
    pst_enabled: bool = True
    pst_seed: int = 9
    forge_attempts: int = 1000
    forge_size: int = 100
    forge_seed: int = 77
    drop_threshold: float = 0.10


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = DatasetSpec()
    partition_kind: str = "iid"  # iid | dirichlet | pathological
    dirichlet_alpha: float = 0.5
    labels_per_client: int = 2
    partition_seed: int = 7
    fl: FLConfig = field(
        default_factory=lambda: FLConfig(total_clients=20, clients_per_round=5, rounds=40, seed=1)
    )
    trigger: TriggerSpec = TriggerSpec()
    watermark: WatermarkSpec = WatermarkSpec()
    attacks: AttackSpec = AttackSpec()
    out_dir: str = "out"

    def partition_spec(self) -> PartitionSpec:
        if self.partition_kind == "iid":
            kind = IID()
        elif self.partition_kind == "dirichlet":
            kind = DirichletNonIID(self.dirichlet_alpha)
        elif self.partition_kind == "pathological":
            kind = PathologicalNonIID(self.labels_per_client)
        else:
            raise ConfigurationError(
                f"unknown partition kind {self.partition_kind!r} "
                "(expected iid | dirichlet | pathological)"
            )
        return PartitionSpec(kind, self.fl.total_clients, self.partition_seed)

    def validate(self) -> None:
        ds = self.dataset
        if ds.kind not in ("synth", "idx"):
            raise ConfigurationError(f"dataset kind must be synth or idx, got {ds.kind!r}")
        if ds.kind == "idx":
            for name in ("train_images", "train_labels", "test_images", "test_labels"):
                path = getattr(ds, name)
                if not path:
                    raise ConfigurationError(f"dataset.{name} is required for idx datasets")
                if not os.path.exists(path):
                    raise ConfigurationError(f"dataset.{name} does not exist: {path}")
        height = ds.resize_height or ds.height
        width = ds.resize_width or ds.width
        violation = validate_patch_params(ds.k, self.trigger.mu, self.trigger.nu, height, width)
        if violation is not None:
            raise ConfigurationError(f"patch parameters invalid: {violation}")
        self.partition_spec()

    def image_size(self) -> tuple[int, int]:
        return (
            self.dataset.resize_height or self.dataset.height,
            self.dataset.resize_width or self.dataset.width,
        )


def _section(parser: configparser.ConfigParser, name: str) -> dict[str, str]:
    return dict(parser[name]) if parser.has_section(name) else {}


def _convert(raw: dict[str, str], key: str, cast, default):
    if key not in raw or raw[key].strip() == "":
        return default
    try:
        return cast(raw[key].strip())
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {key!r}: {raw[key]!r} ({exc})") from None


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(";", ",").split(",") if v.strip())


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def load_config(path: str | None) -> ExperimentConfig:
    """Parse an INI config file; a missing path yields the defaults."""
    defaults = ExperimentConfig()
    if path is None:
        return defaults
    if not os.path.exists(path):
        raise ConfigurationError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from None

    ds = _section(parser, "dataset")
    d0 = defaults.dataset
    dataset = DatasetSpec(
        kind=ds.get("kind", d0.kind).strip(),
        k=_convert(ds, "k", int, d0.k),
        per_class=_convert(ds, "per_class", int, d0.per_class),
        test_per_class=_convert(ds, "test_per_class", int, d0.test_per_class),
        height=_convert(ds, "height", int, d0.height),
        width=_convert(ds, "width", int, d0.width),
        seed=_convert(ds, "seed", int, d0.seed),
        train_images=ds.get("train_images", "").strip(),
        train_labels=ds.get("train_labels", "").strip(),
        test_images=ds.get("test_images", "").strip(),
        test_labels=ds.get("test_labels", "").strip(),
        resize_height=_convert(ds, "resize_height", int, d0.resize_height),
        resize_width=_convert(ds, "resize_width", int, d0.resize_width),
    )

    pt = _section(parser, "partition")
    partition_kind = pt.get("kind", defaults.partition_kind).strip()
    dirichlet_alpha = _convert(pt, "alpha", float, defaults.dirichlet_alpha)
    labels_per_client = _convert(pt, "labels_per_client", int, defaults.labels_per_client)
    partition_seed = _convert(pt, "seed", int, defaults.partition_seed)

    flr = _section(parser, "fl")
    f0 = defaults.fl
    try:
        fl = FLConfig(
            total_clients=_convert(flr, "clients", int, f0.total_clients),
            clients_per_round=_convert(flr, "per_round", int, f0.clients_per_round),
            rounds=_convert(flr, "rounds", int, f0.rounds),
            client_lr=_convert(flr, "client_lr", float, f0.client_lr),
            server_lr=_convert(flr, "server_lr", float, f0.server_lr),
            local_epochs=_convert(flr, "local_epochs", int, f0.local_epochs),
            scaling=_convert(flr, "scaling", float, f0.scaling),
            initiator=_convert(flr, "initiator", int, f0.initiator),
            seed=_convert(flr, "seed", int, f0.seed),
            batch_size=_convert(flr, "batch_size", int, f0.batch_size),
            trigger_per_batch=_convert(flr, "trigger_per_batch", int, f0.trigger_per_batch),
            he_scale_bits=_convert(flr, "he_scale_bits", int, f0.he_scale_bits),
            use_he=_convert(flr, "use_he", _bool, f0.use_he),
        )
    except ConfigurationError:
        raise
    except Exception as exc:
        raise ConfigurationError(f"bad [fl] section: {exc}") from None

    tr = _section(parser, "trigger")
    t0 = defaults.trigger
    trig = TriggerSpec(
        mu=_convert(tr, "mu", int, t0.mu),
        nu=_convert(tr, "nu", int, t0.nu),
        t=_convert(tr, "t", int, t0.t),
        key_seed=_convert(tr, "key_seed", int, t0.key_seed),
        pattern_seed=_convert(tr, "pattern_seed", int, t0.pattern_seed),
        verify_patterns=_convert(tr, "verify_patterns", int, t0.verify_patterns),
        verify_pattern_seed=_convert(tr, "verify_pattern_seed", int, t0.verify_pattern_seed),
    )

    wm = _section(parser, "watermark")
    w0 = defaults.watermark
    watermark = WatermarkSpec(
        epsilon=_convert(wm, "epsilon", float, w0.epsilon),
        gamma=_convert(wm, "gamma", float, w0.gamma),
        subset_size=_convert(wm, "subset_size", int, w0.subset_size),
    )

    at = _section(parser, "attacks")
    a0 = defaults.attacks
    attacks = AttackSpec(
        prune_rates=_convert(at, "prune_rates", _floats, a0.prune_rates),
        quant_bits=_convert(at, "quant_bits", _ints, a0.quant_bits),
        finetune_epochs=_convert(at, "finetune_epochs", int, a0.finetune_epochs),
        finetune_lr=_convert(at, "finetune_lr", float, a0.finetune_lr),
        finetune_per_class=_convert(at, "finetune_per_class", int, a0.finetune_per_class),
        finetune_seed=_convert(at, "finetune_seed", int, a0.finetune_seed),
        pst_enabled=_convert(at, "pst", _bool, a0.pst_enabled),
        pst_seed=_convert(at, "pst_seed", int, a0.pst_seed),
        forge_attempts=_convert(at, "forge_attempts", int, a0.forge_attempts),
        forge_size=_convert(at, "forge_size", int, a0.forge_size),
        forge_seed=_convert(at, "forge_seed", int, a0.forge_seed),
        drop_threshold=_convert(at, "drop_threshold", float, a0.drop_threshold),
    )

    out = _section(parser, "output")
    out_dir = out.get("dir", defaults.out_dir).strip()

    cfg = ExperimentConfig(
        dataset=dataset,
        partition_kind=partition_kind,
        dirichlet_alpha=dirichlet_alpha,
        labels_per_client=labels_per_client,
        partition_seed=partition_seed,
        fl=fl,
        trigger=trig,
        watermark=watermark,
        attacks=attacks,
        out_dir=out_dir,
    )
    return cfg


def apply_overrides(
    cfg: ExperimentConfig,
    seed: int | None = None,
    out: str | None = None,
    dataset: str | None = None,
    partition: str | None = None,
) -> ExperimentConfig:
    """CLI flags take precedence over file values."""
    if seed is not None:
        cfg = replace(cfg, fl=replace(cfg.fl, seed=seed))
    if out is not None:
        cfg = replace(cfg, out_dir=out)
    if dataset is not None:
        kind = {"mnist": "idx", "synth": "synth"}.get(dataset)
        if kind is None:
            raise ConfigurationError(f"unknown dataset flag {dataset!r} (mnist | synth)")
        ds = replace(cfg.dataset, kind=kind)
        if kind == "idx" and not ds.train_images:
            ds = replace(
                ds,
                train_images="data/train-images-idx3-ubyte",
                train_labels="data/train-labels-idx1-ubyte",
                test_images="data/t10k-images-idx3-ubyte",
                test_labels="data/t10k-labels-idx1-ubyte",
                resize_height=32,
                resize_width=32,
            )
        cfg = replace(cfg, dataset=ds)
    if partition is not None:
        cfg = replace(cfg, partition_kind=partition)
    return cfg
