"""Flat ``key = value`` configuration with typed, range-checked keys.

Blank lines and ``#`` comments are ignored. Unknown keys are rejected so a
typo never silently falls back to a default.
"""
import re
from dataclasses import dataclass

from ..errors import ValidationError


_COMMENT = re.compile(r"(^|\s)#.*$")


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Key:
    default: object
    kind: object
    check: object = None
    doc: str = ""


def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _unit(v):
    return 0 <= v <= 1


KEYS = {
    # recogniser
    "d_raw": Key(2048, int, _pos, "raw spatial feature length"),
    "kappa": Key(16, int, _pos, "feature reduction factor"),
    "tau": Key(20, int, _pos, "short window length in frames"),
    "n_self": Key(4, int, _nonneg, "self-attention layers per stack"),
    "n_cross": Key(8, int, _nonneg, "cross-attention layers per stack"),
    "heads": Key(8, int, _pos, "attention heads"),
    "K_s": Key(10, int, _pos, "number of phases"),
    "literal": Key(False, _bool, None, "projection-free single-head attention"),
    "alpha": Key(0.6, float, _nonneg, "Dice weight in the segmentation loss"),
    "beta": Key(0.5, float, _nonneg, "segmentation weight in the spatial-stage loss"),
    "lr": Key(1e-4, float, _pos, "Adam learning rate"),
    "epochs": Key(20, int, _pos, "training epochs"),
    "seed": Key(0, int, _nonneg, "random seed"),
    # geometry
    "mu_curv": Key(0.7, float, _unit, "curvature threshold"),
    "curv_mode": Key("exclude-above", str, lambda v: v in ("exclude-above", "exclude-below"), ""),
    "curv_normalize": Key("median", str, lambda v: v in ("median", "raw"), ""),
    "curv_spacing": Key(5, int, _pos, "index offset of curvature neighbours"),
    "curvature_filter": Key(True, _bool, None, "enable the curvature filter"),
    "lm_max_iter": Key(100, int, _pos, "Levenberg-Marquardt iteration cap"),
    "lambda_in": Key(3.0, float, _pos, "inner annulus divisor"),
    "lambda_out": Key(3.0, float, _pos, "outer annulus divisor"),
    "angular_bins": Key(720, int, _pos, "polar angular resolution"),
    "radial_bins": Key(0, int, _nonneg, "polar radial resolution, 0 = automatic"),
    "v_max": Key(2, int, _nonneg, "radial search range in bins"),
    "confidence_floor": Key(0.2, float, lambda v: -1 <= v <= 1, "minimum NCC peak"),
    # session
    "hysteresis": Key(3, int, _pos, "frames a new phase must persist"),
    "n_stale": Key(15, int, _nonneg, "frames a held ellipse stays usable"),
    # cues
    "cue_map": Key("", str, None, "per-phase cue kinds, ';' between phases, ',' within"),
    "colors": Key("", str, None, "cue colours as KIND:#rrggbb, comma separated"),
    "pic_fraction": Key(0.25, float, _pos, "primary incision arc / (l_major + l_minor)"),
    "sic_fraction": Key(0.12, float, _pos, "secondary incision arc / (l_major + l_minor)"),
    "flip_incision": Key(False, _bool, None, "measure guideline angles clockwise"),
}


class Config:
    """Validated settings; attribute access by key name."""

    def __init__(self, **values):
        self._values = {k: spec.default for k, spec in KEYS.items()}
        for k, v in values.items():
            self.set(k, v)

    def set(self, key, value):
        if key not in KEYS:
            raise ValidationError(f"unknown config key {key!r}")
        spec = KEYS[key]
        try:
            v = spec.kind(value)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"config {key}: {exc}") from exc
        if spec.check is not None and not spec.check(v):
            raise ValidationError(f"config {key}={v!r} out of range")
        self._values[key] = v

    def __getattr__(self, key):
        try:
            return self.__dict__["_values"][key]
        except KeyError:
            raise AttributeError(key) from None

    def as_dict(self):
        return dict(self._values)

    @classmethod
    def parse(cls, text):
        cfg = cls()
        for n, raw in enumerate(text.splitlines(), 1):
            # '#' opens a comment at line start or after whitespace, so colour values survive
            line = _COMMENT.sub("", raw).strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"config line {n}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            cfg.set(key, value)
        return cfg

    @classmethod
    def load(cls, path):
        from pathlib import Path
        p = Path(path)
        if not p.is_file():
            from ..errors import MissingInput
            raise MissingInput(f"missing file: {p}")
        return cls.parse(p.read_text())

    def dump(self):
        lines = []
        for k, spec in KEYS.items():
            v = self._values[k]
            if spec.doc:
                lines.append(f"# {spec.doc}")
            lines.append(f"{k} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"

    # -- views for the library modules ------------------------------------

    def model_config(self):
        from ..lssat.model import LsSatConfig
        return LsSatConfig(d_raw=self.d_raw, kappa=self.kappa, tau=self.tau, n_self=self.n_self,
                           n_cross=self.n_cross, heads=self.heads, K_s=self.K_s,
                           literal=self.literal).validate()

    def train_config(self):
        from ..lssat.train import TrainConfig
        return TrainConfig(lr=self.lr, epochs=self.epochs, seed=self.seed)

    def cue_config(self):
        from ..cues import DEFAULT_COLORS, CueConfig
        colors = dict(DEFAULT_COLORS)
        for item in filter(None, (s.strip() for s in self.colors.split(","))):
            kind, _, color = item.partition(":")
            if kind.strip() not in colors or not color.strip():
                raise ValidationError(f"bad colour entry {item!r}")
            colors[kind.strip()] = color.strip()
        return CueConfig(pic_fraction=self.pic_fraction, sic_fraction=self.sic_fraction,
                         flip=self.flip_incision, colors=colors)

    def phase_cue_map(self):
        from ..cues import PhaseCueMap
        return PhaseCueMap.parse(self.cue_map) if self.cue_map else PhaseCueMap()

    def pipeline_config(self, geometry_only=False):
        from ..ellipse import LMConfig
        from ..pipeline import PipelineConfig
        return PipelineConfig(
            curv_spacing=self.curv_spacing, curv_threshold=self.mu_curv, curv_mode=self.curv_mode,
            curv_normalize=self.curv_normalize, curvature_filter=self.curvature_filter,
            lambda_in=self.lambda_in, lambda_out=self.lambda_out, angular_bins=self.angular_bins,
            radial_bins=self.radial_bins or None, v_max=self.v_max,
            confidence_floor=self.confidence_floor, n_stale=self.n_stale,
            hysteresis=self.hysteresis, geometry_only=geometry_only,
            lm=LMConfig(max_iter=self.lm_max_iter), cue=self.cue_config(), cue_map=self.phase_cue_map())
