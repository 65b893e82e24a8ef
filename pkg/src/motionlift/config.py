"""Run configuration: a flat `key = value` text file with strict validation.

Unknown keys are rejected; every value is type-checked and range-checked at
load. Desk-scale defaults replace the full-scale step counts (the full-scale
presets are in the comments of `default_config_text`).
"""

from __future__ import annotations

import hashlib

from .chamfer import ChamferAlignConfig
from .errors import SchemaError
from .objectpose import ObjectFitConfig
from .schedule import NoiseSchedule, make_schedule
from .sds import LiftConfig
from .triangulate import TriangulationConfig


def _positive(x):
    return x > 0


def _non_negative(x):
    return x >= 0


def _fraction(x):
    return 0.0 <= x <= 1.0


def _beta(x):
    return 0.0 < x < 1.0


# name -> (type tag, default, validator, description)
_SPEC: dict[str, tuple] = {
    "seed": ("int", 0, _non_negative, "global RNG seed"),
    "threads": ("int", 1, _positive, "worker threads (1 = fully sequential)"),

    "schedule.steps": ("int", 100, _positive, "diffusion steps N (paper preset: 1000)"),
    "schedule.beta_start": ("float", 1e-4, _beta, "linear beta schedule start"),
    "schedule.beta_end": ("float", 0.02, _beta, "linear beta schedule end"),

    "model.hidden": ("int", 64, _positive, "denoiser hidden width"),
    "model.depth": ("int", 2, _positive, "temporal mixing layers"),
    "model.kernel": ("int", 3, lambda x: x > 0 and x % 2 == 1, "temporal window"),
    "model.step_embed": ("int", 32, lambda x: x > 0 and x % 2 == 0,
                         "step embedding dim"),
    "model.views": ("int", 4, lambda x: x >= 2, "views V for lifting/multi-view"),

    "sim.sequences": ("int", 16, _positive, "synthetic sequences to generate"),
    "sim.frames": ("int", 24, lambda x: x >= 2, "frames per sequence"),
    "sim.bank_train": ("int", 6, _positive, "train cameras in the bank"),
    "sim.bank_test": ("int", 3, _positive, "test cameras in the bank"),
    "sim.image_size": ("int", 1000, _positive, "square image size in px"),

    "training.steps_sv": ("int", 2000, _positive,
                          "single-view training steps (paper preset: 300000)"),
    "training.steps_mv": ("int", 1000, _positive,
                          "multi-view training steps (paper preset: 120000)"),
    "training.batch_size": ("int", 64, _positive, "batch size"),
    "training.lr": ("float", 1e-4, _positive, "Adam learning rate"),
    "training.hybrid_global": ("int", 2, _positive, "video-global share of 2:1 mix"),
    "training.hybrid_local": ("int", 1, _positive, "reprojected-local share"),
    "training.drop_rate": ("float", 0.1, _fraction, "random keypoint drop rate"),
    "training.predefined_fraction": ("float", 0.3, _fraction,
                                     "predefined-camera share of the 7:3 mix"),
    "training.line_weight": ("float", 0.1, _non_negative, "line-matching weight"),

    "sds.iterations": ("int", 500, _positive, "lift optimization iterations"),
    "sds.lr": ("float", 0.01, _positive, "lift Adam learning rate"),
    "sds.weight_sds": ("float", 1.0, _non_negative, "SDS term weight"),
    "sds.weight_line": ("float", 1.0, _non_negative, "cross-view line weight"),
    "sds.draws": ("int", 1, _positive, "SDS noise draws per step"),
    "sds.n_band_low": ("float", 0.05, _fraction, "lower step-band fraction"),
    "sds.n_band_high": ("float", 0.8, _fraction, "upper step-band fraction"),
    "sds.subject_center": ("vec3", (0.0, 0.0, 4.0), None,
                           "ring center in world meters"),
    "sds.ring_radius": ("float", 0.0, _non_negative, "ring radius (0 = auto)"),

    "recon.triangulation_method": ("choice:gauss_newton,gradient_descent",
                                   "gauss_newton", None, "refinement method"),
    "recon.triangulation_iters": ("int", 500, _positive,
                                  "gradient-descent refinement iterations"),
    "recon.triangulation_lr": ("float", 0.01, _positive, "refinement step size"),
    "recon.object_iters": ("int", 2000, _positive, "object pose iterations"),
    "recon.object_lr": ("float", 0.05, _positive, "object pose learning rate"),
    "recon.lambda_smooth": ("float", 0.1, _non_negative,
                            "rotation smoothness weight"),

    "chamfer.points": ("int", 5000, _positive, "sampled points per set"),
    "chamfer.restarts": ("int", 200, _positive, "first-frame random restarts"),
    "chamfer.restart_iters": ("int", 30, _positive, "steps per restart candidate"),
    "chamfer.refine_iters": ("int", 300, _positive, "steps for the best candidate"),
    "chamfer.lr": ("float", 0.02, _positive, "alignment learning rate"),

    "metrics.foot_height": ("float", 0.05, _positive,
                            "foot-sliding height threshold in m"),
}


def _convert(key: str, raw, path: str | None):
    tag = _SPEC[key][0]
    try:
        if tag == "int":
            if isinstance(raw, str) and not raw.lstrip("+-").isdigit():
                raise ValueError("not an integer")
            return int(raw)
        if tag == "float":
            return float(raw)
        if tag == "vec3":
            if isinstance(raw, str):
                parts = [float(x) for x in raw.replace(",", " ").split()]
            else:
                parts = [float(x) for x in raw]
            if len(parts) != 3:
                raise ValueError("expected three numbers")
            return tuple(parts)
        if tag.startswith("choice:"):
            options = tag.split(":", 1)[1].split(",")
            val = str(raw)
            if val not in options:
                raise ValueError(f"must be one of {options}")
            return val
    except (TypeError, ValueError) as e:
        raise SchemaError(f"invalid value {raw!r} ({e})", path=path, field=key)
    raise AssertionError(f"unhandled type tag {tag}")


class Config:
    """Validated flat configuration."""

    def __init__(self, values: dict | None = None, path: str | None = None):
        self._values = {k: spec[1] for k, spec in _SPEC.items()}
        if values:
            for key, raw in values.items():
                if key not in _SPEC:
                    raise SchemaError("unknown key", path=path, field=key)
                val = _convert(key, raw, path)
                validator = _SPEC[key][2]
                if validator is not None and not validator(val):
                    raise SchemaError(f"value {val!r} out of range", path=path,
                                      field=key)
                self._values[key] = val
        if self["sds.n_band_low"] > self["sds.n_band_high"]:
            raise SchemaError("sds.n_band_low exceeds sds.n_band_high", path=path,
                              field="sds.n_band_low")
        if self["schedule.beta_start"] > self["schedule.beta_end"]:
            raise SchemaError("schedule.beta_start exceeds schedule.beta_end",
                              path=path, field="schedule.beta_start")

    def __getitem__(self, key: str):
        return self._values[key]

    @staticmethod
    def load(path) -> "Config":
        values = {}
        try:
            fh = open(path)
        except FileNotFoundError:
            raise SchemaError("file not found", path=str(path))
        with fh:
            for ln, line in enumerate(fh, start=1):
                stripped = line.split("#", 1)[0].strip()
                if not stripped:
                    continue
                if "=" not in stripped:
                    raise SchemaError(f"line {ln}: expected 'key = value'",
                                      path=str(path))
                key, _, raw = stripped.partition("=")
                key = key.strip()
                raw = raw.strip()
                if key in values:
                    raise SchemaError(f"line {ln}: duplicate key", path=str(path),
                                      field=key)
                values[key] = raw
        return Config(values, path=str(path))

    def canonical_text(self) -> str:
        lines = []
        for key in sorted(self._values):
            v = self._values[key]
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.canonical_text())

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()

    # sub-config builders -------------------------------------------------

    def schedule(self) -> NoiseSchedule:
        return make_schedule(self["schedule.steps"], self["schedule.beta_start"],
                             self["schedule.beta_end"])

    def lift_config(self) -> LiftConfig:
        radius = self["sds.ring_radius"]
        return LiftConfig(
            views=self["model.views"],
            iterations=self["sds.iterations"],
            lr=self["sds.lr"],
            sds_weight=self["sds.weight_sds"],
            line_weight=self["sds.weight_line"],
            sds_draws=self["sds.draws"],
            n_band=(self["sds.n_band_low"], self["sds.n_band_high"]),
            subject_center=self["sds.subject_center"],
            ring_radius=None if radius == 0 else radius,
        )

    def triangulation_config(self) -> TriangulationConfig:
        return TriangulationConfig(
            method=self["recon.triangulation_method"],
            gd_iterations=self["recon.triangulation_iters"],
            gd_lr=self["recon.triangulation_lr"],
        )

    def object_fit_config(self) -> ObjectFitConfig:
        return ObjectFitConfig(
            iterations=self["recon.object_iters"],
            lr=self["recon.object_lr"],
            lambda_smooth=self["recon.lambda_smooth"],
        )

    def chamfer_config(self) -> ChamferAlignConfig:
        return ChamferAlignConfig(
            n_points=self["chamfer.points"],
            restarts=self["chamfer.restarts"],
            restart_iters=self["chamfer.restart_iters"],
            refine_iters=self["chamfer.refine_iters"],
            lr=self["chamfer.lr"],
        )


def default_config_text() -> str:
    lines = ["# motionlift configuration (desk-scale defaults)"]
    for key, (tag, default, _, desc) in _SPEC.items():
        v = default
        if isinstance(v, tuple):
            v = ",".join(repr(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{key} = {v}  # {desc}")
    return "\n".join(lines) + "\n"
