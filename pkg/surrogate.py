# surrogate.py
"""
Five small feed-forward networks (nu, phi) -> M11, M12, M44, Q11, K11.

Hidden layers use ReLU, the output layer is linear.  Inputs are mapped to
[0, 1] from the training bounds and targets are standardised; both maps
are stored with each network so a bundle is self-contained.
"""
import copy
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

import config
from dataset import records_to_arrays
from microcell import CellSolution

logger = logging.getLogger(__name__)


class ExtrapolationError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


class GateError(RuntimeError):
    pass


class BundleFormatError(ValueError):
    pass


@dataclass
class Mlp:
    name: str
    weights: list               # (out, in) per layer
    biases: list
    input_lo: np.ndarray        # (2,) for (nu, phi)
    input_hi: np.ndarray
    target_mean: float = 0.0
    target_std: float = 1.0

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise BundleFormatError(f"Network '{self.name}': weight and bias lists differ in length")
        if self.weights[0].shape[1] != 2 or self.weights[-1].shape[0] != 1:
            raise BundleFormatError(f"Network '{self.name}': input must be 2 and output 1")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (W.shape[0],):
                raise BundleFormatError(f"Network '{self.name}': bias {i} does not match weight rows")
            if i and W.shape[1] != self.weights[i - 1].shape[0]:
                raise BundleFormatError(f"Network '{self.name}': layer {i} does not chain onto layer {i - 1}")

    @property
    def widths(self):
        return [W.shape[0] for W in self.weights[:-1]]


def relu(x):
    return np.maximum(x, 0.0)


def normalise_inputs(mlp, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    span = np.where(mlp.input_hi > mlp.input_lo, mlp.input_hi - mlp.input_lo, 1.0)
    Z = (X - mlp.input_lo) / span
    bad = (Z < -config.EXTRAPOLATION_MARGIN) | (Z > 1.0 + config.EXTRAPOLATION_MARGIN)
    if np.any(bad):
        row, col = np.argwhere(bad)[0]
        name = ("nu", "phi")[col]
        raise ExtrapolationError(
            f"Network '{mlp.name}': {name}={X[row, col]:.6g} outside trained range "
            f"[{mlp.input_lo[col]:.6g}, {mlp.input_hi[col]:.6g}] by more than "
            f"{100 * config.EXTRAPOLATION_MARGIN:.0f}%")
    return Z


def _forward(weights, biases, Z):
    a = Z
    for W, b in zip(weights[:-1], biases[:-1]):
        a = relu(a @ W.T + b)
    return a @ weights[-1].T + biases[-1]


def predict(mlp, X):
    out = _forward(mlp.weights, mlp.biases, normalise_inputs(mlp, X))[:, 0]
    return out * mlp.target_std + mlp.target_mean


def feed_forward(mlp, x):
    """Single evaluation at x = (nu, phi)."""
    return float(predict(mlp, np.asarray(x, dtype=float).reshape(1, 2))[0])


def lipschitz_bound(mlp):
    """Upper bound on |dy/dx_i| from the product of layer operator norms."""
    norm = np.prod([np.linalg.norm(W, 2) for W in mlp.weights])
    span = np.min(np.where(mlp.input_hi > mlp.input_lo, mlp.input_hi - mlp.input_lo, 1.0))
    return float(norm * mlp.target_std / span)


def init_mlp(name, widths, rng, input_lo, input_hi, target_mean=0.0, target_std=1.0):
    """He-initialised hidden layers, zero output layer."""
    dims = [2] + list(widths) + [1]
    weights, biases = [], []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        if i == len(dims) - 2:
            weights.append(np.zeros((fan_out, fan_in)))
        else:
            weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(name=name, weights=weights, biases=biases, input_lo=np.asarray(input_lo, dtype=float),
               input_hi=np.asarray(input_hi, dtype=float), target_mean=float(target_mean),
               target_std=float(target_std))


def _gradients(weights, biases, Z, t):
    activations, pre = [Z], []
    a = Z
    for i, (W, b) in enumerate(zip(weights, biases)):
        z = a @ W.T + b
        pre.append(z)
        a = z if i == len(weights) - 1 else relu(z)
        activations.append(a)
    residual = activations[-1][:, 0] - t
    loss = float(np.mean(residual**2))
    delta = (2.0 / t.size) * residual[:, None]
    gW, gb = [None] * len(weights), [None] * len(weights)
    for i in range(len(weights) - 1, -1, -1):
        gW[i] = delta.T @ activations[i]
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ weights[i]) * (pre[i - 1] > 0.0)
    return loss, gW, gb


def relative_l2(pred, target):
    denom = np.linalg.norm(target)
    if denom == 0.0:
        return float(np.linalg.norm(pred - target))
    return float(np.linalg.norm(pred - target) / denom)


def train_network(name, widths, X_train, y_train, X_val, y_val, input_lo, input_hi, hp, seed):
    """Full-batch Adam on the standardised targets with early stopping on validation MSE."""
    rng = np.random.default_rng(seed)
    mean = float(np.mean(y_train))
    std = float(np.std(y_train))
    if std == 0.0:
        std = 1.0
    mlp = init_mlp(name, widths, rng, input_lo, input_hi, mean, std)
    Zt, Zv = normalise_inputs(mlp, X_train), normalise_inputs(mlp, X_val)
    tt, tv = (y_train - mean) / std, (y_val - mean) / std

    params = mlp.weights + mlp.biases
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    nl = len(mlp.weights)
    best_val, best_epoch = np.inf, 0
    best = copy.deepcopy((mlp.weights, mlp.biases))
    b1, b2, lr, eps = hp.beta1, hp.beta2, hp.learning_rate, hp.epsilon

    epoch = 0
    for epoch in range(1, hp.max_epochs + 1):
        loss, gW, gb = _gradients(mlp.weights, mlp.biases, Zt, tt)
        if not np.isfinite(loss):
            raise TrainingError(f"Network '{name}': non-finite loss at epoch {epoch} (learning rate {lr})")
        grads = gW + gb
        for k, (p, g) in enumerate(zip(params, grads)):
            m[k] = b1 * m[k] + (1.0 - b1) * g
            v[k] = b2 * v[k] + (1.0 - b2) * g * g
            m_hat = m[k] / (1.0 - b1**epoch)
            v_hat = v[k] / (1.0 - b2**epoch)
            p -= lr * m_hat / (np.sqrt(v_hat) + eps)
        val = float(np.mean((_forward(mlp.weights, mlp.biases, Zv)[:, 0] - tv) ** 2))
        if val < best_val:
            best_val, best_epoch = val, epoch
            best = ([W.copy() for W in params[:nl]], [b.copy() for b in params[nl:]])
        elif epoch - best_epoch >= hp.patience:
            logger.info("Network '%s': early stop at epoch %d (best epoch %d)", name, epoch, best_epoch)
            break
        if hp.log_every and epoch % hp.log_every == 0:
            logger.info("Network '%s': epoch %d, train MSE %.3e, validation MSE %.3e", name, epoch, loss, val)

    mlp.weights, mlp.biases = best
    result = {
        "epochs": epoch,
        "best_epoch": best_epoch,
        "train_error": relative_l2(predict(mlp, X_train), y_train),
        "validation_error": relative_l2(predict(mlp, X_val), y_val),
    }
    return mlp, result


def _train_job(args):
    return train_network(*args)


@dataclass
class SurrogateBundle:
    networks: dict
    metadata: dict = field(default_factory=dict)

    def predict_all(self, nu, phi):
        x = (nu, phi)
        return {name: feed_forward(self.networks[name], x) for name in config.SURROGATE_OUTPUTS}

    def cell_tensors(self, nu, phi):
        out = self.predict_all(nu, phi)
        return CellSolution(phi=float(phi), nu=float(nu), **out)

    @property
    def validation_errors(self):
        return {name: info["validation_error"] for name, info in self.metadata.get("errors", {}).items()}


def split_indices(n, validation_fraction, seed):
    perm = np.random.default_rng(seed).permutation(n)
    n_val = max(1, int(round(validation_fraction * n)))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train(records, hp=None, seed=42, architectures=None, workers=1, enforce_gate=True):
    """
    Trains the five networks on cell records.  90/10 (configurable) split by
    a seeded shuffle; raises GateError when enforce_gate and any output misses
    the validation gate.
    """
    hp = hp or config.SurrogateConfig()
    architectures = architectures or hp.architectures
    if len(records) < config.MIN_TRAINING_ROWS:
        raise TrainingError(f"Need at least {config.MIN_TRAINING_ROWS} training rows, got {len(records)}")
    X, Y = records_to_arrays(records)
    train_idx, val_idx = split_indices(len(records), hp.validation_fraction, seed)
    lo, hi = X.min(axis=0), X.max(axis=0)
    logger.info("Starting surrogate training: %d rows (%d train / %d validation), seed %d",
                len(records), train_idx.size, val_idx.size, seed)

    jobs = [(name, list(architectures[name]), X[train_idx], Y[name][train_idx], X[val_idx], Y[name][val_idx],
             lo, hi, hp, [seed, k]) for k, name in enumerate(config.SURROGATE_OUTPUTS)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_job, jobs))
    else:
        results = [_train_job(job) for job in jobs]

    networks, errors = {}, {}
    for name, (mlp, info) in zip(config.SURROGATE_OUTPUTS, results):
        networks[name] = mlp
        errors[name] = info
        logger.info("Network '%s' finished: train error %.3e, validation error %.3e (%d epochs)",
                    name, info["train_error"], info["validation_error"], info["epochs"])

    metadata = {
        "seed": int(seed),
        "n_rows": len(records),
        "validation_indices": [int(i) for i in val_idx],
        "bounds": {"nu": [float(lo[0]), float(hi[0])], "phi": [float(lo[1]), float(hi[1])]},
        "hyperparameters": {"learning_rate": hp.learning_rate, "beta1": hp.beta1, "beta2": hp.beta2,
                            "epsilon": hp.epsilon, "max_epochs": hp.max_epochs, "patience": hp.patience,
                            "validation_fraction": hp.validation_fraction},
        "errors": errors,
    }
    bundle = SurrogateBundle(networks=networks, metadata=metadata)
    if enforce_gate:
        check_gate(bundle, hp.gate)
    return bundle


def check_gate(bundle, gate=config.VALIDATION_GATE):
    failed = {name: err for name, err in bundle.validation_errors.items() if not err <= gate}
    if failed:
        detail = ", ".join(f"{name}={err:.3%}" for name, err in failed.items())
        logger.error("Surrogate validation gate (%.1f%%) failed: %s", 100 * gate, detail)
        raise GateError(f"Validation error above {gate:.1%} for {detail}")
    return True


def evaluate_bundle(bundle, records):
    """Relative L2 error per output on the given (held-out) records."""
    X, Y = records_to_arrays(records)
    return {name: relative_l2(predict(bundle.networks[name], X), Y[name]) for name in config.SURROGATE_OUTPUTS}


# --- Serialisation ---
def _mlp_to_dict(mlp):
    return {
        "name": mlp.name,
        "widths": mlp.widths,
        "weights": [W.tolist() for W in mlp.weights],
        "biases": [b.tolist() for b in mlp.biases],
        "input_norm": {"lo": mlp.input_lo.tolist(), "hi": mlp.input_hi.tolist()},
        "target_norm": {"mean": mlp.target_mean, "std": mlp.target_std},
    }


def _mlp_from_dict(d):
    try:
        mlp = Mlp(name=d["name"],
                  weights=[np.array(W, dtype=float) for W in d["weights"]],
                  biases=[np.array(b, dtype=float) for b in d["biases"]],
                  input_lo=np.array(d["input_norm"]["lo"], dtype=float),
                  input_hi=np.array(d["input_norm"]["hi"], dtype=float),
                  target_mean=float(d["target_norm"]["mean"]),
                  target_std=float(d["target_norm"]["std"]))
    except (KeyError, TypeError, ValueError) as e:
        raise BundleFormatError(f"Malformed network record: {e}") from e
    if list(d.get("widths", mlp.widths)) != mlp.widths:
        raise BundleFormatError(f"Network '{mlp.name}': declared widths {d['widths']} do not match weights")
    return mlp


def bundle_to_json(bundle):
    doc = {
        "version": config.BUNDLE_VERSION,
        "outputs": [_mlp_to_dict(bundle.networks[name]) for name in config.SURROGATE_OUTPUTS],
        "metadata": bundle.metadata,
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def save_bundle(bundle, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(bundle_to_json(bundle))
    logger.info("Surrogate bundle saved to '%s'", path)
    return path


def load_bundle(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"Surrogate bundle '{path}' not found")
    with open(path, encoding="utf-8") as f:
        text = f.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise BundleFormatError(f"Surrogate bundle '{path}' could not be parsed: {e}") from e
    if not isinstance(doc, dict) or doc.get("version") != config.BUNDLE_VERSION:
        found = doc.get("version") if isinstance(doc, dict) else None
        raise BundleFormatError(f"Surrogate bundle version {found!r} not supported (expected {config.BUNDLE_VERSION})")
    networks = {}
    for record in doc.get("outputs", []):
        mlp = _mlp_from_dict(record)
        networks[mlp.name] = mlp
    missing = set(config.SURROGATE_OUTPUTS) - set(networks)
    if missing:
        raise BundleFormatError(f"Surrogate bundle '{path}' lacks networks: {', '.join(sorted(missing))}")
    return SurrogateBundle(networks=networks, metadata=doc.get("metadata", {}))
