"""Black-box classifier boundary.

Everything downstream sees a classifier only through :func:`classify`: an
object with ``kind``, ``concurrency_safe``, ``input_size``, class label
names, and a ``predict_probability(image) -> float`` method. Three
implementations live here: an analytic planted-region model for exact
tests, a trainable desk model over pooled pixel features, and a line
protocol adapter that talks to an external process.
"""

import base64
import json
import os
import selectors
import shlex
import subprocess
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (ClassifierError, DimensionMismatch, InputError, LengthMismatch,
                     OverlappingRegions, SingleClassTraining, SubprocessFailure)
from .imaging import validate_image

POSITIVE_LABEL = "diseased"
NEGATIVE_LABEL = "healthy"
DECISION_BOUNDARY = 0.5

# region counts as present when the mean absolute deviation from the
# reference exceeds this
PRESENCE_THRESHOLD = 0.05


def sigmoid(z):
    """Numerically stable logistic function, elementwise."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Prediction:
    probability: float
    label: str


def classify(m, x, boundary=DECISION_BOUNDARY):
    """Run classifier `m` on image `x` and attach the decision label.

    The label is m.positive_label iff probability >= boundary. Raises
    DimensionMismatch when the image does not match the classifier's
    declared input size and ClassifierError when the model returns a
    value outside [0, 1].
    """
    x = validate_image(x)
    if m.input_size is not None and x.shape != tuple(m.input_size):
        raise DimensionMismatch(
            f"classifier expects {tuple(m.input_size)}, got {x.shape}")
    p = float(m.predict_probability(x))
    if not np.isfinite(p) or not 0.0 <= p <= 1.0:
        raise ClassifierError(f"classifier returned invalid probability {p!r}")
    label = m.positive_label if p >= boundary else m.negative_label
    return Prediction(probability=p, label=label)


class PlantedRegionClassifier:
    """Analytic logistic model over planted region-presence indicators.

    predict_probability(x) = sigmoid(intercept + sum of weights[i] over
    regions i whose mean |x - reference| exceeds PRESENCE_THRESHOLD).
    With no regions the output is sigmoid(intercept) for every input.
    """

    kind = "planted"
    concurrency_safe = True

    def __init__(self, regions, weights, intercept, reference,
                 positive_label=POSITIVE_LABEL, negative_label=NEGATIVE_LABEL):
        self.reference = validate_image(reference, "reference")
        if len(regions) != len(weights):
            raise LengthMismatch(
                f"{len(regions)} regions but {len(weights)} weights")
        masks = []
        for i, region in enumerate(regions):
            mask = np.asarray(region, dtype=bool)
            if mask.shape != self.reference.shape:
                raise DimensionMismatch(
                    f"region {i} shape {mask.shape} != reference {self.reference.shape}")
            masks.append(mask)
        occupied = np.zeros(self.reference.shape, dtype=bool)
        for i, mask in enumerate(masks):
            if (occupied & mask).any():
                raise OverlappingRegions(f"region {i} overlaps an earlier region")
            occupied |= mask
        self.regions = tuple(masks)
        self.weights = tuple(float(w) for w in weights)
        self.intercept = float(intercept)
        self.input_size = self.reference.shape
        self.positive_label = positive_label
        self.negative_label = negative_label
        self.metadata = f"planted logistic, {len(masks)} regions"

    def presence(self, x):
        """0/1 vector of which regions deviate from the reference."""
        bits = np.zeros(len(self.regions), dtype=np.int64)
        for i, mask in enumerate(self.regions):
            if mask.any() and float(
                    np.mean(np.abs(x[mask] - self.reference[mask]))) > PRESENCE_THRESHOLD:
                bits[i] = 1
        return bits

    def predict_probability(self, x):
        z = self.intercept + float(np.dot(self.presence(x), self.weights))
        return sigmoid(z)


def pooled_features(x, grid=16):
    """Average-pool an image onto a grid x grid mesh, flattened row-major."""
    h, w = x.shape
    if h % grid or w % grid:
        raise DimensionMismatch(
            f"image {h}x{w} does not tile into a {grid}x{grid} grid")
    return x.reshape(grid, h // grid, grid, w // grid).mean(axis=(1, 3)).ravel()


class DeskClassifier:
    """Pure-numpy inference for a trained desk model.

    `params` holds either {"coef", "intercept"} for the logistic model or
    {"layers": [[W, b], ...]} for the small MLP (ReLU hidden layers,
    logistic output). Training lives in train_desk_classifier; this class
    carries no sklearn dependency so saved models load anywhere.
    """

    kind = "desk"
    concurrency_safe = True

    def __init__(self, model, params, input_size, pool_grid,
                 positive_label=POSITIVE_LABEL, negative_label=NEGATIVE_LABEL,
                 validation_accuracy=None, seed=None, metadata=""):
        if model not in ("logistic", "mlp"):
            raise InputError(f"unknown desk model {model!r}")
        self.model = model
        self.params = params
        self.input_size = tuple(input_size)
        self.pool_grid = int(pool_grid)
        self.positive_label = positive_label
        self.negative_label = negative_label
        self.validation_accuracy = validation_accuracy
        self.seed = seed
        self.metadata = metadata or f"desk {model} pool={pool_grid}"

    def predict_probability(self, x):
        feats = pooled_features(x, self.pool_grid)
        if self.model == "logistic":
            z = float(np.dot(feats, self.params["coef"]) + self.params["intercept"])
        else:
            a = feats
            layers = self.params["layers"]
            for w_mat, bias in layers[:-1]:
                a = np.maximum(w_mat.T @ a + bias, 0.0)
            w_mat, bias = layers[-1]
            z = float((w_mat.T @ a + bias)[0])
        return sigmoid(z)

    def to_dict(self):
        d = {
            "kind": "desk",
            "model": self.model,
            "input_size": list(self.input_size),
            "pool_grid": self.pool_grid,
            "positive_label": self.positive_label,
            "negative_label": self.negative_label,
            "validation_accuracy": self.validation_accuracy,
            "seed": self.seed,
            "metadata": self.metadata,
        }
        if self.model == "logistic":
            d["coef"] = np.asarray(self.params["coef"]).tolist()
            d["intercept"] = float(self.params["intercept"])
        else:
            d["layers"] = [[np.asarray(w).tolist(), np.asarray(b).tolist()]
                           for w, b in self.params["layers"]]
        return d

    @classmethod
    def from_dict(cls, d):
        if d.get("kind") != "desk":
            raise InputError(f"not a desk classifier file (kind={d.get('kind')!r})")
        if d["model"] == "logistic":
            params = {"coef": np.asarray(d["coef"], dtype=np.float64),
                      "intercept": float(d["intercept"])}
        else:
            params = {"layers": [(np.asarray(w, dtype=np.float64),
                                  np.asarray(b, dtype=np.float64))
                                 for w, b in d["layers"]]}
        return cls(model=d["model"], params=params, input_size=d["input_size"],
                   pool_grid=d["pool_grid"], positive_label=d["positive_label"],
                   negative_label=d["negative_label"],
                   validation_accuracy=d.get("validation_accuracy"),
                   seed=d.get("seed"), metadata=d.get("metadata", ""))


def _feature_matrix(items, pool_grid, positive_label, negative_label, split):
    feats, ys, shape = [], [], None
    for image, label in items:
        image = validate_image(image)
        if shape is None:
            shape = image.shape
        elif image.shape != shape:
            raise DimensionMismatch(
                f"{split} images mix shapes {shape} and {image.shape}")
        if label == positive_label:
            ys.append(1)
        elif label == negative_label:
            ys.append(0)
        else:
            raise InputError(f"unknown label {label!r} in {split} split")
        feats.append(pooled_features(image, pool_grid))
    return np.asarray(feats), np.asarray(ys), shape


def train_desk_classifier(train, valid, seed, model="logistic", pool_grid=16,
                          positive_label=POSITIVE_LABEL,
                          negative_label=NEGATIVE_LABEL):
    """Fit a desk classifier on (image, label) pairs.

    model "logistic" fits an L2-regularized logistic regression on pooled
    features; "mlp" fits one 32-unit ReLU hidden layer with lbfgs. Either
    way the returned handle runs inference in plain numpy and records
    accuracy on the validation split. Deterministic for a fixed seed.
    """
    if not train or not valid:
        raise InputError("train and valid splits must both be non-empty")
    x_train, y_train, shape = _feature_matrix(
        train, pool_grid, positive_label, negative_label, "train")
    x_valid, y_valid, vshape = _feature_matrix(
        valid, pool_grid, positive_label, negative_label, "valid")
    if vshape != shape:
        raise DimensionMismatch(f"valid images {vshape} != train images {shape}")
    if len(np.unique(y_train)) < 2:
        raise SingleClassTraining("training split contains a single class")

    if model == "logistic":
        from sklearn.linear_model import LogisticRegression
        fit = LogisticRegression(C=1.0, max_iter=5000).fit(x_train, y_train)
        params = {"coef": fit.coef_[0].astype(np.float64),
                  "intercept": float(fit.intercept_[0])}
    elif model == "mlp":
        from sklearn.neural_network import MLPClassifier
        fit = MLPClassifier(hidden_layer_sizes=(32,), solver="lbfgs",
                            alpha=1e-3, max_iter=1000,
                            random_state=int(seed)).fit(x_train, y_train)
        layers = [(w.astype(np.float64), b.astype(np.float64))
                  for w, b in zip(fit.coefs_, fit.intercepts_)]
        params = {"layers": layers}
    else:
        raise InputError(f"unknown desk model {model!r}")

    handle = DeskClassifier(model=model, params=params, input_size=shape,
                            pool_grid=pool_grid, positive_label=positive_label,
                            negative_label=negative_label, seed=int(seed))
    hits = sum(classify(handle, image).label == label for image, label in valid)
    acc = hits / len(valid)
    handle.validation_accuracy = acc
    handle.metadata = (f"desk {model} pool={pool_grid} seed={seed} "
                       f"val_acc={acc:.4f} n_train={len(train)}")
    return handle


def save_classifier(handle, path):
    if not isinstance(handle, DeskClassifier):
        raise InputError("only desk classifiers serialize to file")
    with open(path, "w") as fh:
        json.dump(handle.to_dict(), fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_classifier(path):
    path = Path(path)
    if not path.exists():
        raise InputError(f"classifier file not found: {path}")
    with open(path) as fh:
        return DeskClassifier.from_dict(json.load(fh))


class SubprocessClassifier:
    """Adapter around an external classifier process.

    The child is spawned once and spoken to over a line protocol: one
    request per line on stdin, `{"id": k, "width": w, "height": h,
    "pixels_b64": base64 of row-major float32 little-endian}`, answered
    by one line `{"id": k, "probability": p}` on stdout. Any timeout,
    early exit, or malformed reply raises SubprocessFailure. Calls are
    not reentrant, so concurrency_safe is False and the perturbation
    engine serializes them.
    """

    kind = "subprocess"
    concurrency_safe = False

    def __init__(self, command, timeout=30.0, input_size=None,
                 positive_label=POSITIVE_LABEL, negative_label=NEGATIVE_LABEL):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = float(timeout)
        self.input_size = tuple(input_size) if input_size is not None else None
        self.positive_label = positive_label
        self.negative_label = negative_label
        self.metadata = "subprocess: " + " ".join(self.command)
        self._proc = None
        self._buf = b""
        self._next_id = 0

    def _fail(self, why):
        self.close()
        raise SubprocessFailure(why)

    def _ensure_started(self):
        if self._proc is not None and self._proc.poll() is not None:
            code = self._proc.returncode
            self._proc = None
            raise SubprocessFailure(f"classifier process exited with code {code}")
        if self._proc is None:
            try:
                self._proc = subprocess.Popen(
                    self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
            except OSError as exc:
                raise SubprocessFailure(f"cannot start {self.command[0]}: {exc}")
            self._buf = b""

    def _read_line(self, deadline):
        sel = selectors.DefaultSelector()
        sel.register(self._proc.stdout, selectors.EVENT_READ)
        try:
            while b"\n" not in self._buf:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    self._fail(f"classifier response timed out after {self.timeout}s")
                if not sel.select(remaining):
                    continue
                chunk = os.read(self._proc.stdout.fileno(), 1 << 16)
                if not chunk:
                    code = self._proc.poll()
                    self._fail(f"classifier closed stdout (exit code {code})")
                self._buf += chunk
        finally:
            sel.close()
        line, _, self._buf = self._buf.partition(b"\n")
        return line

    def predict_probability(self, x):
        self._ensure_started()
        x = np.ascontiguousarray(x, dtype="<f4")
        request_id = self._next_id
        self._next_id += 1
        request = {
            "id": request_id,
            "width": int(x.shape[1]),
            "height": int(x.shape[0]),
            "pixels_b64": base64.b64encode(x.tobytes()).decode("ascii"),
        }
        deadline = time.monotonic() + self.timeout
        try:
            self._proc.stdin.write((json.dumps(request) + "\n").encode("ascii"))
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError):
            code = self._proc.poll()
            self._fail(f"classifier stdin closed (exit code {code})")
        line = self._read_line(deadline)
        try:
            reply = json.loads(line)
        except ValueError:
            self._fail(f"malformed classifier reply: {line[:200]!r}")
        if reply.get("id") != request_id:
            self._fail(f"reply id {reply.get('id')!r} != request id {request_id}")
        if "probability" not in reply:
            self._fail(f"reply missing probability: {reply!r}")
        return float(reply["probability"])

    def close(self):
        proc, self._proc = self._proc, None
        self._buf = b""
        if proc is None or proc.poll() is not None:
            return
        try:
            proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=2.0)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass
