"""Service configuration: one YAML file covering index, encoder, detector,
pipeline, judge, and metrics settings, with environment variables overriding
secrets (judge endpoint and key). `build_runtime` assembles the live objects
the CLI and service share."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .detect import DetectConfig
from .encode import EncoderSpec, SyntheticEncoder, SyntheticWorld, build_encoder
from .judge import JudgeBackendSpec, MockJudgeBackend, HttpJudgeBackend
from .pipeline import BroadClassMap, PipelineConfig, SearchPipeline
from .vecindex import IndexConfig, VectorIndex


@dataclass(frozen=True)
class WorldConfig:
    num_categories: int = 20
    noise_sigma: float = 0.1
    seed: int = 7
    categories: list[str] | None = None


@dataclass(frozen=True)
class MetricsConfig:
    k_values: tuple[int, ...] = (1, 3, 6)
    relevance_threshold: int = 2
    similarity_threshold: int = 2
    bootstrap_b: int = 1000
    bootstrap_seed: int = 0

    def __post_init__(self):
        if not self.k_values:
            raise ValueError("metrics.k_values must be non-empty")


@dataclass(frozen=True)
class ServiceConfig:
    dimension: int = 64
    listen_host: str = "127.0.0.1"
    listen_port: int = 8080
    index_path: str | None = None
    encoder_kind: str = "synthetic"
    encoder_endpoint: str | None = None
    detector_endpoint: str | None = None
    detections_fixture: str | None = None
    world: WorldConfig = field(default_factory=WorldConfig)
    index: IndexConfig | None = None
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)
    judge: JudgeBackendSpec = field(default_factory=lambda: JudgeBackendSpec(kind="mock"))
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    broad_class_map_path: str | None = None
    runs_dir: str = "runs"
    seed: int = 0
    max_invalid_fraction: float = 0.01

    def to_snapshot(self) -> dict:
        """Stable dict for manifests and run-id hashing (secrets excluded)."""
        index = self.index or IndexConfig(dimension=self.dimension)
        return {
            "dimension": self.dimension,
            "encoder_kind": self.encoder_kind,
            "world": {
                "num_categories": self.world.num_categories,
                "noise_sigma": self.world.noise_sigma,
                "seed": self.world.seed,
                "categories": self.world.categories,
            },
            "index": {
                "num_partitions": index.num_partitions,
                "nprobe": index.nprobe,
                "quantizer": index.quantizer,
                "rerank_depth": index.rerank_depth,
            },
            "pipeline": {
                "k_per_object": self.pipeline.k_per_object,
                "dup_cosine_threshold": self.pipeline.dup_cosine_threshold,
                "broad_class_vote_m": self.pipeline.broad_class_vote_m,
                "geo": self.pipeline.geo,
                "final_gallery_size": self.pipeline.final_gallery_size,
            },
            "detect": {
                "confidence_threshold": self.detect.confidence_threshold,
                "nms_iou_threshold": self.detect.nms_iou_threshold,
                "rank_alpha": self.detect.rank_alpha,
                "max_objects": self.detect.max_objects,
            },
            "judge": {"kind": self.judge.kind, "model": self.judge.model},
            "metrics": {
                "k_values": list(self.metrics.k_values),
                "relevance_threshold": self.metrics.relevance_threshold,
                "similarity_threshold": self.metrics.similarity_threshold,
                "bootstrap_b": self.metrics.bootstrap_b,
                "bootstrap_seed": self.metrics.bootstrap_seed,
            },
            "seed": self.seed,
        }


def _take(data: dict, key: str, default=None):
    value = data.get(key, default)
    return default if value is None else value


def load_config(path: str | Path) -> ServiceConfig:
    """Parse the YAML config file into a ServiceConfig."""
    data = yaml.safe_load(Path(path).read_text()) or {}
    dimension = int(_take(data, "dimension", 64))
    listen = str(_take(data, "listen", "127.0.0.1:8080"))
    host, _, port = listen.rpartition(":")

    world_data = _take(data, "synthetic_world", {})
    world = WorldConfig(
        num_categories=int(_take(world_data, "num_categories", 20)),
        noise_sigma=float(_take(world_data, "noise_sigma", 0.1)),
        seed=int(_take(world_data, "seed", 7)),
        categories=world_data.get("categories"),
    )
    index_data = _take(data, "index", {})
    index = IndexConfig(
        dimension=dimension,
        num_partitions=int(_take(index_data, "num_partitions", 256)),
        nprobe=int(_take(index_data, "nprobe", 32)),
        quantizer=str(_take(index_data, "quantizer", "scalar8")),
        rerank_depth=index_data.get("rerank_depth"),
    )
    pipeline_data = _take(data, "pipeline", {})
    pipeline = PipelineConfig(
        k_per_object=int(_take(pipeline_data, "k_per_object", 24)),
        dup_cosine_threshold=float(_take(pipeline_data, "dup_cosine_threshold", 0.98)),
        broad_class_vote_m=int(_take(pipeline_data, "broad_class_vote_m", 10)),
        geo=str(_take(pipeline_data, "geo", "US")),
        final_gallery_size=int(_take(pipeline_data, "final_gallery_size", 48)),
    )
    detect_data = _take(data, "detect", {})
    detect = DetectConfig(
        confidence_threshold=float(_take(detect_data, "confidence_threshold", 0.30)),
        nms_iou_threshold=float(_take(detect_data, "nms_iou_threshold", 0.50)),
        rank_alpha=float(_take(detect_data, "rank_alpha", 0.5)),
        max_objects=int(_take(detect_data, "max_objects", 8)),
    )
    judge_data = _take(data, "judge", {})
    judge = JudgeBackendSpec(
        kind=str(_take(judge_data, "kind", "mock")),
        endpoint=judge_data.get("endpoint"),
        model=str(_take(judge_data, "model", "")),
        max_retries=int(_take(judge_data, "max_retries", 3)),
        max_concurrent=int(_take(judge_data, "max_concurrent", 8)),
    )
    metrics_data = _take(data, "metrics", {})
    metrics = MetricsConfig(
        k_values=tuple(int(k) for k in _take(metrics_data, "k_values", [1, 3, 6])),
        relevance_threshold=int(_take(metrics_data, "relevance_threshold", 2)),
        similarity_threshold=int(_take(metrics_data, "similarity_threshold", 2)),
        bootstrap_b=int(_take(metrics_data, "bootstrap_b", 1000)),
        bootstrap_seed=int(_take(metrics_data, "bootstrap_seed", 0)),
    )
    detector_data = _take(data, "detector", {})
    encoder_data = data.get("encoder") or {}
    return ServiceConfig(
        dimension=dimension,
        listen_host=host or "127.0.0.1",
        listen_port=int(port or 8080),
        index_path=data.get("index_path"),
        encoder_kind=str(encoder_data.get("kind", "synthetic")),
        encoder_endpoint=encoder_data.get("endpoint"),
        detector_endpoint=detector_data.get("endpoint"),
        detections_fixture=detector_data.get("fixture"),
        world=world,
        index=index,
        pipeline=pipeline,
        detect=detect,
        judge=judge,
        metrics=metrics,
        broad_class_map_path=data.get("broad_class_map"),
        runs_dir=str(_take(data, "runs_dir", "runs")),
        seed=int(_take(data, "seed", 0)),
        max_invalid_fraction=float(_take(data, "max_invalid_fraction", 0.01)),
    )


def default_config_yaml(dataset_dir: str, dimension: int, world: WorldConfig,
                        num_partitions: int, nprobe: int) -> str:
    """Render the documented config file for a generated dataset directory."""
    doc = {
        "dimension": dimension,
        "listen": "127.0.0.1:8080",
        "index_path": f"{dataset_dir}/index.vsx",
        "broad_class_map": f"{dataset_dir}/broad_classes.jsonl",
        "runs_dir": f"{dataset_dir}/runs",
        "encoder": {"kind": "synthetic"},
        "synthetic_world": {
            "num_categories": world.num_categories,
            "noise_sigma": world.noise_sigma,
            "seed": world.seed,
        },
        "index": {"num_partitions": num_partitions, "nprobe": nprobe, "quantizer": "scalar8"},
        "pipeline": {"k_per_object": 24, "dup_cosine_threshold": 0.98,
                     "broad_class_vote_m": 10, "geo": "US", "final_gallery_size": 48},
        "detect": {"confidence_threshold": 0.30, "nms_iou_threshold": 0.50,
                   "rank_alpha": 0.5, "max_objects": 8},
        "judge": {"kind": "mock", "max_retries": 3, "max_concurrent": 8},
        "metrics": {"k_values": [1, 3, 6], "bootstrap_b": 1000, "bootstrap_seed": 0},
        "seed": 0,
    }
    return yaml.safe_dump(doc, sort_keys=True)


@dataclass
class Runtime:
    """Live objects assembled from a ServiceConfig."""

    config: ServiceConfig
    index: VectorIndex
    encoder: object
    world: SyntheticWorld | None
    class_map: BroadClassMap
    pipeline: SearchPipeline

    def make_judge_backend(self, kind: str | None = None):
        kind = kind or self.config.judge.kind
        if kind == "mock":
            return MockJudgeBackend(self.class_map)
        spec = self.config.judge
        if spec.kind != "http":
            spec = JudgeBackendSpec(kind="http", endpoint=spec.endpoint, model=spec.model,
                                    max_retries=spec.max_retries,
                                    max_concurrent=spec.max_concurrent)
        return HttpJudgeBackend(spec)


def build_world(config: ServiceConfig) -> SyntheticWorld:
    world = config.world
    if world.categories is not None:
        return SyntheticWorld(len(world.categories), world.noise_sigma, world.seed,
                              config.dimension, categories=world.categories)
    return SyntheticWorld(world.num_categories, world.noise_sigma, world.seed,
                          config.dimension)


def build_runtime(config: ServiceConfig, *, index: VectorIndex | None = None) -> Runtime:
    """Load (or accept) the index, build the encoder and pipeline."""
    if index is None:
        if config.index_path and Path(config.index_path).exists():
            idx_cfg = config.index or IndexConfig(dimension=config.dimension)
            index = VectorIndex.load_snapshot(
                config.index_path,
                nprobe=idx_cfg.nprobe,
                quantizer=idx_cfg.quantizer,
                rerank_depth=idx_cfg.rerank_depth,
            )
        else:
            index = VectorIndex(config.index or IndexConfig(dimension=config.dimension))

    world = None
    if config.encoder_kind == "synthetic":
        world = build_world(config)
        encoder = SyntheticEncoder(world)
    else:
        encoder = build_encoder(EncoderSpec(kind="http", dimension=config.dimension,
                                            endpoint=config.encoder_endpoint))
    class_map = BroadClassMap({})
    if config.broad_class_map_path and Path(config.broad_class_map_path).exists():
        class_map = BroadClassMap.from_jsonl(config.broad_class_map_path)
    pipeline = SearchPipeline(index, encoder, class_map, config.pipeline, config.detect)
    return Runtime(config=config, index=index, encoder=encoder, world=world,
                   class_map=class_map, pipeline=pipeline)
