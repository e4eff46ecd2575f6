"""Group classifiers, clinical ensemble, B-Score grading and threshold rules.

Each radiomic group gets its own L2-regularised logistic regression,
trained by full-batch gradient descent on standardised features.  The
three group probabilities plus age and menopause feed a second logistic
model whose probability is cut into a 1-5 B-Score.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .core import BScore, _frozen
from .errors import DegenerateLabelsError, NonFiniteFeatureError, RangeError, SchemaMismatchError
from .radiomics import GROUPS, SCHEMA_VERSION, RadiomicFeatureVector, check_schema

MAMMO_THRESHOLD = 0.43
MODEL_FORMAT = "densityfusion-model"
MODEL_FORMAT_VERSION = 1


class Group(enum.Enum):
    HOTSPOT = "hotspot"
    VASCULAR = "vascular"
    AREOLAR = "areolar"


def sigmoid(z):
    """Logistic function, stable for large ``|z|``."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# logistic regression
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LinearModel:
    """Logistic model over standardised features.

    ``mean`` and ``std`` are frozen at training; zero-variance features get
    ``std = 1``.
    """

    weights: np.ndarray
    bias: float
    mean: np.ndarray
    std: np.ndarray
    group: Group | None = None
    loss_history: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        w = _frozen(self.weights, np.float64)
        mu = _frozen(self.mean, np.float64)
        sd = _frozen(self.std, np.float64)
        if not (w.ndim == 1 and w.shape == mu.shape == sd.shape):
            raise RangeError("weights, mean and std must be 1-D of equal length")
        if np.any(sd <= 0):
            raise RangeError("normalisation std must be > 0")
        if self.group is not None and w.size != len(GROUPS[self.group.value]):
            raise SchemaMismatchError(
                f"{self.group.value} model needs {len(GROUPS[self.group.value])} weights, got {w.size}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "std", sd)
        object.__setattr__(self, "bias", float(self.bias))

    def __eq__(self, other):
        if not isinstance(other, LinearModel):
            return NotImplemented
        return (self.group is other.group and self.bias == other.bias
                and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("weights", "mean", "std")))

    __hash__ = None

    @property
    def dim(self) -> int:
        return self.weights.size

    def normalize(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def decision(self, x) -> np.ndarray:
        return self.normalize(x) @ self.weights + self.bias


def logistic_loss_grad(w: np.ndarray, b: float, Z: np.ndarray, y: np.ndarray, lam: float):
    """Mean log-loss plus ``lam/2 * |w|^2`` and its gradient.

    The bias is not penalised.  Returns ``(loss, grad_w, grad_b)``.
    """
    z = Z @ w + b
    # log(1 + exp(-z)) for y=1 and log(1 + exp(z)) for y=0, both via logaddexp
    loss = float(np.mean(np.logaddexp(0.0, np.where(y > 0, -z, z)))) + 0.5 * lam * float(w @ w)
    r = sigmoid(z) - y
    n = Z.shape[0]
    return loss, Z.T @ r / n + lam * w, float(r.sum() / n)


def _check_training_data(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] != y.size:
        raise RangeError(f"X has shape {X.shape} but y has {y.size} labels")
    if not np.all(np.isfinite(X)):
        raise NonFiniteFeatureError("training features contain NaN or infinity")
    if not np.all((y == 0) | (y == 1)):
        raise RangeError("labels must be 0/1")
    if y.size == 0 or y.min() == y.max():
        raise DegenerateLabelsError("training labels contain a single class")
    return X, y


def train_logistic(X, y, lam: float = 0.1, lr: float = 1.0, iters: int = 500,
                   group: Group | None = None, tol: float = 1e-12) -> LinearModel:
    """Fit an L2 logistic regression by full-batch gradient descent.

    Weights start at zero.  A step that would raise the loss is retried
    with the learning rate halved, so the recorded loss sequence is
    non-increasing.  Training stops after ``iters`` steps, when no halving
    yields a decrease, or when the gradient norm falls below ``tol``.

    Raises
    ------
    DegenerateLabelsError
        If ``y`` holds a single class.
    NonFiniteFeatureError
        If ``X`` has NaN or infinite entries.
    """
    if lam < 0:
        raise RangeError("lam must be >= 0")
    X, y = _check_training_data(X, y)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0
    Z = (X - mean) / std

    w = np.zeros(X.shape[1])
    b = 0.0
    loss, gw, gb = logistic_loss_grad(w, b, Z, y, lam)
    history = [loss]
    step = lr
    for _ in range(iters):
        if math.sqrt(float(gw @ gw) + gb * gb) < tol:
            break
        for _halving in range(60):
            w_new, b_new = w - step * gw, b - step * gb
            new_loss, new_gw, new_gb = logistic_loss_grad(w_new, b_new, Z, y, lam)
            if new_loss <= loss:
                break
            step *= 0.5
        else:
            break
        w, b, loss, gw, gb = w_new, b_new, new_loss, new_gw, new_gb
        history.append(loss)
    return LinearModel(w, b, mean, std, group, tuple(history))


def score_group(m: LinearModel, f) -> float:
    """Group malignancy probability ``sigmoid(w . normalize(f) + b)``.

    ``f`` may be the group's raw values or a full feature vector, from
    which the model's group is sliced.
    """
    if isinstance(f, RadiomicFeatureVector):
        check_schema(f)
        if m.group is None:
            raise SchemaMismatchError("model has no group tag; pass the group values directly")
        f = f.group(m.group.value)
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (m.dim,):
        raise SchemaMismatchError(f"model expects {m.dim} features, got shape {f.shape}")
    return float(sigmoid(m.decision(f)))


# ---------------------------------------------------------------------------
# ensemble and B-Score
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnsembleModel:
    w_hotspot: float = 0.0
    w_vascular: float = 0.0
    w_areolar: float = 0.0
    w_age: float = 0.0  # per 100 years
    w_menopause: float = 0.0
    bias: float = 0.0

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise RangeError(f"ensemble {name} is not finite")
            object.__setattr__(self, name, v)


def clinical_inputs(s_h, s_v, s_a, age, menopause) -> np.ndarray:
    return np.array([s_h, s_v, s_a, age / 100.0, 1.0 if menopause else 0.0], dtype=np.float64)


def ensemble_score(e: EnsembleModel, s_h: float, s_v: float, s_a: float, age: float, menopause: bool) -> float:
    x = clinical_inputs(s_h, s_v, s_a, age, menopause)
    w = np.array([e.w_hotspot, e.w_vascular, e.w_areolar, e.w_age, e.w_menopause])
    return float(sigmoid(float(x @ w) + e.bias))


def train_ensemble(S, ages, menopause, y, lam: float = 0.01, lr: float = 1.0, iters: int = 500):
    """Fit the ensemble on group scores ``S`` (n x 3) plus age and menopause.

    Training runs on standardised inputs; the result is folded back to raw
    input units.  Returns ``(EnsembleModel, loss_history)``.
    """
    S = np.asarray(S, dtype=np.float64)
    X = np.column_stack([S, np.asarray(ages, dtype=np.float64) / 100.0,
                         np.asarray(menopause, dtype=np.float64)])
    m = train_logistic(X, y, lam=lam, lr=lr, iters=iters)
    raw = m.weights / m.std
    bias = m.bias - float(raw @ m.mean)
    return EnsembleModel(*raw.tolist(), bias), m.loss_history


@dataclass(frozen=True)
class BScoreBins:
    cuts: tuple = (0.15, 0.35, 0.60, 0.85)

    def __post_init__(self):
        cuts = tuple(float(c) for c in self.cuts)
        if len(cuts) != 4:
            raise RangeError("B-Score bins need exactly four cut points")
        if not all(0.0 < c < 1.0 for c in cuts) or any(a >= b for a, b in zip(cuts, cuts[1:])):
            raise RangeError(f"cut points {cuts} must be strictly increasing inside (0, 1)")
        object.__setattr__(self, "cuts", cuts)


def to_bscore(p: float, bins: BScoreBins = BScoreBins()) -> BScore:
    """Grade = 1 + number of cut points <= p, so a tie goes to the higher grade."""
    return BScore(1 + sum(c <= p for c in bins.cuts))


def thermalytix_positive(b: BScore) -> bool:
    return b.grade >= 3


def mammo_positive(p: float, threshold: float = MAMMO_THRESHOLD) -> bool:
    return p > threshold


# ---------------------------------------------------------------------------
# Youden threshold
# ---------------------------------------------------------------------------

def youden_candidates(scores) -> np.ndarray:
    """``-inf``, midpoints between consecutive distinct scores, ``+inf``."""
    u = np.unique(np.asarray(scores, dtype=np.float64))
    mids = u[:-1] + (u[1:] - u[:-1]) / 2.0
    return np.concatenate([[-np.inf], mids, [np.inf]])


def select_threshold_youden(scores, labels) -> float:
    """Threshold maximising sensitivity + specificity - 1 for ``score > t``.

    J is compared exactly as the integer ``TP * N + TN * P``; ties go to
    the largest threshold.

    Raises
    ------
    DegenerateLabelsError
        If only one class is present.
    """
    s = np.asarray(scores, dtype=np.float64)
    lab = np.asarray(labels).astype(bool)
    if s.shape != lab.shape:
        raise RangeError("scores and labels differ in length")
    pos, neg = np.sort(s[lab]), np.sort(s[~lab])
    P, N = pos.size, neg.size
    if P == 0 or N == 0:
        raise DegenerateLabelsError("Youden threshold needs both classes")
    cand = youden_candidates(s)
    tp = P - np.searchsorted(pos, cand, side="right")
    tn = np.searchsorted(neg, cand, side="right")
    j = tp.astype(np.int64) * N + tn.astype(np.int64) * P
    best = np.flatnonzero(j == j.max())[-1]
    return float(cand[best])


# ---------------------------------------------------------------------------
# full thermal model and persistence
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThermalModel:
    hotspot: LinearModel
    vascular: LinearModel
    areolar: LinearModel
    ensemble: EnsembleModel
    bins: BScoreBins = BScoreBins()
    schema_version: str = SCHEMA_VERSION

    def group_model(self, g: Group) -> LinearModel:
        return getattr(self, g.value)

    def group_scores(self, vec: RadiomicFeatureVector) -> tuple:
        if vec.schema_version != self.schema_version:
            raise SchemaMismatchError(
                f"model trained on {self.schema_version!r}, vector is {vec.schema_version!r}")
        return tuple(score_group(self.group_model(g), vec.group(g.value)) for g in Group)

    def score(self, vec: RadiomicFeatureVector, age: float, menopause: bool) -> dict:
        s_h, s_v, s_a = self.group_scores(vec)
        p = ensemble_score(self.ensemble, s_h, s_v, s_a, age, menopause)
        b = to_bscore(p, self.bins)
        return {"s_hotspot": s_h, "s_vascular": s_v, "s_areolar": s_a,
                "ensemble": p, "bscore": b, "thermal_positive": thermalytix_positive(b)}


def train_thermal_model(vectors, ages, menopause, y, lam: float = 0.1, iters: int = 500,
                        bins: BScoreBins = BScoreBins()):
    """Train the three group models and the ensemble; returns ``(model, final_losses)``."""
    vectors = list(vectors)
    for v in vectors:
        check_schema(v)
    F = np.array([v.values for v in vectors])
    if not np.all(np.isfinite(F)):
        raise NonFiniteFeatureError("feature matrix contains NaN or infinity")
    models, losses = {}, {}
    for g in Group:
        X = np.array([v.group(g.value) for v in vectors])
        models[g] = train_logistic(X, y, lam=lam, iters=iters, group=g)
        losses[g.value] = models[g].loss_history[-1]
    S = np.array([[score_group(models[g], v.group(g.value)) for g in Group] for v in vectors])
    ens, hist = train_ensemble(S, ages, menopause, y, iters=iters)
    losses["ensemble"] = hist[-1]
    model = ThermalModel(models[Group.HOTSPOT], models[Group.VASCULAR], models[Group.AREOLAR], ens, bins)
    return model, losses


def _floats(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def format_model(m: ThermalModel) -> str:
    """Plain-text ``key=value`` lines; floats use ``repr`` so parsing is exact."""
    lines = [f"format={MODEL_FORMAT}", f"format_version={MODEL_FORMAT_VERSION}",
             f"feature_schema={m.schema_version}"]
    for g in Group:
        lm = m.group_model(g)
        lines += [f"{g.value}.weights={_floats(lm.weights)}", f"{g.value}.bias={lm.bias!r}",
                  f"{g.value}.mean={_floats(lm.mean)}", f"{g.value}.std={_floats(lm.std)}"]
    for name in EnsembleModel.__dataclass_fields__:
        lines.append(f"ensemble.{name}={getattr(m.ensemble, name)!r}")
    lines.append(f"bscore.cuts={_floats(m.bins.cuts)}")
    return "\n".join(lines) + "\n"


def parse_model(text: str) -> ThermalModel:
    kv = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise SchemaMismatchError(f"model line {lineno}: expected key=value")
        kv[key.strip()] = value.strip()
    if kv.get("format") != MODEL_FORMAT or kv.get("format_version") != str(MODEL_FORMAT_VERSION):
        raise SchemaMismatchError("not a densityfusion model file of a supported version")
    if kv.get("feature_schema") != SCHEMA_VERSION:
        raise SchemaMismatchError(f"model feature schema {kv.get('feature_schema')!r}, expected {SCHEMA_VERSION!r}")
    try:
        vec = lambda key: [float(x) for x in kv[key].split(",")]  # noqa: E731
        groups = {g: LinearModel(vec(f"{g.value}.weights"), float(kv[f"{g.value}.bias"]),
                                 vec(f"{g.value}.mean"), vec(f"{g.value}.std"), g) for g in Group}
        ens = EnsembleModel(**{n: float(kv[f"ensemble.{n}"]) for n in EnsembleModel.__dataclass_fields__})
        bins = BScoreBins(tuple(vec("bscore.cuts")))
    except KeyError as exc:
        raise SchemaMismatchError(f"model file missing key {exc.args[0]}") from None
    return ThermalModel(groups[Group.HOTSPOT], groups[Group.VASCULAR], groups[Group.AREOLAR], ens, bins)


def save_model(m: ThermalModel, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_model(m))


def load_model(path) -> ThermalModel:
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())
