"""Flat key-value run configuration files.

Lines look like ``scene.landmark_count = 4000``; '#' starts a comment.
Every key must map to a known scene/pipeline field, otherwise parsing
fails; values are coerced to the field's type. Texture-poor arcs and
query pans are written as colon-joined triples, comma-separated; sweep
elevations are a comma-separated pair.
"""

from __future__ import annotations

import dataclasses

from .pipeline import PipelineConfig
from .solvers import BundleConfig, RansacConfig, TriangulationConfig
from .synth import SceneConfig


class ConfigError(Exception):
    pass


def _parse_triples(text, what):
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        bits = part.split(":")
        if len(bits) != 3:
            raise ConfigError(f"bad {what} spec {part!r} (want a:b:c)")
        out.append((float(bits[0]), float(bits[1]), float(bits[2])))
    return out


def _coerce(field: dataclasses.Field, value: str):
    t = field.type
    if t in ("int", int):
        return int(value)
    if t in ("float", float):
        return float(value)
    if t in ("bool", bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"bad boolean {value!r}")
    if field.name == "texture_poor_arcs":
        return _parse_triples(value, "arc")
    if field.name == "query_pans":
        return [(int(s), int(e), z) for s, e, z in _parse_triples(value, "pan")]
    if field.name == "db_sweep_z_offsets":
        bits = [float(s) for s in value.split(",")]
        if len(bits) != 2:
            raise ConfigError(f"db_sweep_z_offsets wants two values, got {value!r}")
        return tuple(bits)
    raise ConfigError(f"cannot parse value for {field.name}")


_SCENE_FIELDS = {f.name: f for f in dataclasses.fields(SceneConfig)}
_PIPELINE_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}
_RANSAC_FIELDS = {f.name: f for f in dataclasses.fields(RansacConfig)}
_BUNDLE_FIELDS = {f.name: f for f in dataclasses.fields(BundleConfig)}
_TRI_FIELDS = {f.name: f for f in dataclasses.fields(TriangulationConfig)}


def parse_run_config(path):
    """Returns (SceneConfig, PipelineConfig). Rejects unknown keys."""
    scene_kv = {}
    pipe_kv = {}
    ransac_kv = {}
    bundle_kv = {}
    tri_kv = {}
    with open(path) as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{ln}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key.startswith("scene."):
                name = key[len("scene.") :]
                if name not in _SCENE_FIELDS:
                    raise ConfigError(f"{path}:{ln}: unknown key {key!r}")
                scene_kv[name] = _coerce(_SCENE_FIELDS[name], value)
            elif key.startswith("pipeline.ransac."):
                name = key[len("pipeline.ransac.") :]
                if name not in _RANSAC_FIELDS:
                    raise ConfigError(f"{path}:{ln}: unknown key {key!r}")
                ransac_kv[name] = _coerce(_RANSAC_FIELDS[name], value)
            elif key.startswith("pipeline.bundle."):
                name = key[len("pipeline.bundle.") :]
                if name not in _BUNDLE_FIELDS:
                    raise ConfigError(f"{path}:{ln}: unknown key {key!r}")
                bundle_kv[name] = _coerce(_BUNDLE_FIELDS[name], value)
            elif key.startswith("pipeline.triangulation."):
                name = key[len("pipeline.triangulation.") :]
                if name not in _TRI_FIELDS:
                    raise ConfigError(f"{path}:{ln}: unknown key {key!r}")
                tri_kv[name] = _coerce(_TRI_FIELDS[name], value)
            elif key.startswith("pipeline."):
                name = key[len("pipeline.") :]
                if name not in _PIPELINE_FIELDS or name in ("ransac", "bundle", "triangulation"):
                    raise ConfigError(f"{path}:{ln}: unknown key {key!r}")
                pipe_kv[name] = _coerce(_PIPELINE_FIELDS[name], value)
            else:
                raise ConfigError(f"{path}:{ln}: unknown key {key!r}")

    try:
        scene = SceneConfig(**scene_kv)
        pipeline = PipelineConfig(
            ransac=RansacConfig(**ransac_kv),
            bundle=BundleConfig(**bundle_kv),
            triangulation=TriangulationConfig(**tri_kv),
            **pipe_kv,
        )
    except ConfigError:
        raise
    except Exception as e:  # dataclass invariants double as validation
        raise ConfigError(str(e)) from e
    return scene, pipeline
