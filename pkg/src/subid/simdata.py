"""Reproducible synthetic data: open-loop simulation and the feedback loop.

Random numbers come from NumPy's PCG64 bit generator seeded through
``SeedSequence``; a given ``(spec, seed)`` always yields bit-identical data.
"""
import csv
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import numerics as nx
from .exceptions import BadLoopSpec, BadShape, NotPsd
from .ssmodel import NoiseSpec, SsModel

WHITE = "white_gaussian"
BINARY = "binary_switching"
ZERO = "zero"


def rng_for(seed, *keys):
    """PCG64 generator for ``seed``; ``keys`` select independent child streams."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(keys))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(eq=False)
class DataSet:
    """Synchronized input (``n_u x N``) and output (``n_y x N``) records.

    ``hidden`` carries simulation internals (true states, noises) for test
    oracles; it is never written to disk.
    """

    U: np.ndarray
    Y: np.ndarray
    sample_period: float = 1.0
    seed: Optional[int] = None
    closed_loop: bool = False
    hidden: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        U = np.asarray(self.U, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        if U.ndim == 1:
            U = U.reshape(1, -1)
        if Y.ndim == 1:
            Y = Y.reshape(1, -1)
        if U.ndim != 2 or Y.ndim != 2 or U.shape[1] != Y.shape[1]:
            raise BadShape(f"U {U.shape} and Y {Y.shape} must share the sample count")
        if not (np.all(np.isfinite(U)) and np.all(np.isfinite(Y))):
            raise ValueError("data contains NaN or Inf")
        self.U, self.Y = U, Y

    @property
    def n_u(self):
        return self.U.shape[0]

    @property
    def n_y(self):
        return self.Y.shape[0]

    @property
    def N(self):
        return self.Y.shape[1]


@dataclass(frozen=True)
class ExcitationSpec:
    kind: str = WHITE
    amplitude: float = 1.0
    switch_period: int = 1

    def __post_init__(self):
        if self.kind not in (WHITE, BINARY, ZERO):
            raise ValueError(f"unknown excitation kind {self.kind!r}")
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if self.switch_period < 1:
            raise ValueError("switch_period must be >= 1")

    def to_dict(self):
        return {"kind": self.kind, "amplitude": self.amplitude, "switch_period": self.switch_period}

    @classmethod
    def from_dict(cls, d):
        return cls(d.get("kind", WHITE), float(d.get("amplitude", 1.0)), int(d.get("switch_period", 1)))


def loop_matrix(plant, controller):
    """State matrix of the feedback interconnection ``[x; x_c]``."""
    A, B, C = plant.A, plant.B, plant.C
    Ac, Bc, Cc, Dc = controller.A, controller.B, controller.C, controller.D
    return np.block([[A - B @ Dc @ C, B @ Cc], [-Bc @ C, Ac]])


@dataclass(frozen=True, eq=False)
class LoopSpec:
    plant: SsModel
    controller: SsModel
    noise: NoiseSpec
    r1_spec: ExcitationSpec = ExcitationSpec(ZERO, 0.0)
    r2_spec: ExcitationSpec = ExcitationSpec(WHITE, 1.0)

    def validate(self):
        p, c = self.plant, self.controller
        if np.any(p.D != 0):
            raise BadLoopSpec("plant must have D = 0 (one sample delay in the loop)")
        if c.n_u != p.n_y or c.n_y != p.n_u:
            raise BadLoopSpec("controller dimensions do not match the plant")
        if self.noise.Q.shape != (p.n_x, p.n_x) or self.noise.R.shape != (p.n_y, p.n_y):
            raise BadLoopSpec("noise covariance dimensions do not match the plant")
        rho = nx.spectral_radius(loop_matrix(p, c))
        if rho >= 1:
            raise BadLoopSpec(f"closed loop is unstable (spectral radius {rho:.4f})")
        return self

    def to_dict(self):
        return {
            "plant": self.plant.to_dict(),
            "controller": self.controller.to_dict(),
            "noise": self.noise.to_dict(),
            "r1": self.r1_spec.to_dict(),
            "r2": self.r2_spec.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            SsModel.from_dict(d["plant"]),
            SsModel.from_dict(d["controller"]),
            NoiseSpec.from_dict(d["noise"]),
            ExcitationSpec.from_dict(d.get("r1", {"kind": ZERO, "amplitude": 0.0})),
            ExcitationSpec.from_dict(d.get("r2", {"kind": WHITE, "amplitude": 1.0})),
        )


def joint_sqrt(noise):
    """Symmetric square root of ``[[R, S^T], [S, Q]]`` (PSD-singular tolerated)."""
    J = noise.joint
    w = np.linalg.eigvalsh(0.5 * (J + J.T)) if J.size else np.zeros(0)
    scale = max(1.0, float(np.max(np.abs(J)))) if J.size else 1.0
    if w.size and w[0] < -1e-10 * scale:
        raise NotPsd(f"joint noise covariance has eigenvalue {w[0]:.3e}")
    root = nx.sym_sqrt(J)
    # exactly-zero variances must give exactly-zero noise channels
    dead = np.diag(J) == 0
    root[dead, :] = 0.0
    root[:, dead] = 0.0
    return root


def gen_noise(noise, n_samples, seed):
    """Draw ``(V, W)`` with joint covariance ``[[R, S^T], [S, Q]]``."""
    root = joint_sqrt(noise)
    n_y = noise.R.shape[0]
    z = rng_for(seed, 0).standard_normal((root.shape[0], n_samples))
    vw = root @ z
    return vw[:n_y], vw[n_y:]


def gen_excitation(spec, n_channels, n_samples, seed):
    """Excitation signal of shape ``(n_channels, n_samples)``."""
    if spec.kind == ZERO or spec.amplitude == 0:
        return np.zeros((n_channels, n_samples))
    rng = rng_for(seed, 1)
    if spec.kind == WHITE:
        return spec.amplitude * rng.standard_normal((n_channels, n_samples))
    n_blocks = -(-n_samples // spec.switch_period)
    signs = rng.choice(np.array([-1.0, 1.0]), size=(n_channels, n_blocks))
    return spec.amplitude * np.repeat(signs, spec.switch_period, axis=1)[:, :n_samples]


def simulate(model, u, w=None, v=None, x0=None):
    """Process-form recursion ``x+ = Ax + Bu + w``, ``y = Cx + Du + v``.

    Returns ``(Y, X)`` with ``X`` holding ``x(0..N)``.
    """
    u = np.asarray(u, dtype=float).reshape(model.n_u, -1)
    N = u.shape[1]
    A, B, C, D = model.A, model.B, model.C, model.D
    x = np.zeros(model.n_x) if x0 is None else np.asarray(x0, dtype=float).ravel()
    X = np.empty((model.n_x, N + 1))
    Bu = B @ u
    if w is not None:
        Bu = Bu + w
    for t in range(N):
        X[:, t] = x
        x = A @ x + Bu[:, t]
    X[:, N] = x
    Y = C @ X[:, :N] + D @ u
    if v is not None:
        Y = Y + v
    return Y, X


def simulate_innovation(model, u, e, x0=None):
    """Innovation-form recursion ``x+ = Ax + Bu + Ke``, ``y = Cx + Du + e``."""
    if model.K is None:
        raise ValueError("innovation form needs K")
    e = np.asarray(e, dtype=float).reshape(model.n_y, -1)
    return simulate(model, u, w=model.K @ e, v=e, x0=x0)


def simulate_open(model, u, noise=None, innovation_cov=None, seed=None, x0=None,
                  sample_period=1.0):
    """Open-loop data record.

    Parameters
    ----------
    model : SsModel
    u : (n_u, N) array
    noise : NoiseSpec, optional
        Process/measurement noise (process form).
    innovation_cov : array, optional
        Innovation covariance; requires ``model.K`` (innovation form).
    seed : int, optional
    x0 : initial state (zeros by default)
    """
    u = np.asarray(u, dtype=float).reshape(model.n_u, -1)
    N = u.shape[1]
    hidden = {}
    if innovation_cov is not None:
        if model.K is None:
            raise ValueError("innovation-form simulation needs model.K")
        Re = np.atleast_2d(np.asarray(innovation_cov, dtype=float))
        root = nx.sym_sqrt(Re)
        e = root @ rng_for(seed, 0).standard_normal((model.n_y, N))
        Y, X = simulate_innovation(model, u, e, x0)
        hidden["e"] = e
    elif noise is not None:
        V, W = gen_noise(noise, N, seed)
        Y, X = simulate(model, u, W, V, x0)
        hidden["v"], hidden["w"] = V, W
    else:
        Y, X = simulate(model, u, x0=x0)
    hidden["x"] = X
    if N > 10_000 and model.n_x and nx.spectral_radius(model.A) >= 1:
        warnings.warn("simulating an unstable model over more than 1e4 samples", RuntimeWarning)
        hidden["unstable"] = True
    return DataSet(u, Y, sample_period, seed, False, hidden)


def simulate_closed(loop, n_samples, seed, sample_period=1.0):
    """Simulate plant and controller in feedback.

    Per step: ``y = C x + v``, controller input ``r1 - y``,
    ``u = Cc xc + Dc (r1 - y) + r2``, then both states advance. The plant has
    no direct feed-through so there is no algebraic loop.
    """
    loop.validate()
    p, c = loop.plant, loop.controller
    V, W = gen_noise(loop.noise, n_samples, seed)
    r1 = gen_excitation(loop.r1_spec, p.n_y, n_samples, child_seed(seed, 1))
    r2 = gen_excitation(loop.r2_spec, p.n_u, n_samples, child_seed(seed, 2))
    A, B, C = p.A, p.B, p.C
    Ac, Bc, Cc, Dc = c.A, c.B, c.C, c.D
    x = np.zeros(p.n_x)
    xc = np.zeros(c.n_x)
    U = np.empty((p.n_u, n_samples))
    Y = np.empty((p.n_y, n_samples))
    X = np.empty((p.n_x, n_samples + 1))
    for t in range(n_samples):
        X[:, t] = x
        y = C @ x + V[:, t]
        err = r1[:, t] - y
        u = Cc @ xc + Dc @ err + r2[:, t]
        U[:, t], Y[:, t] = u, y
        x = A @ x + B @ u + W[:, t]
        xc = Ac @ xc + Bc @ err
    X[:, n_samples] = x
    hidden = {"x": X, "v": V, "w": W, "r1": r1, "r2": r2}
    return DataSet(U, Y, sample_period, seed, True, hidden)


def child_seed(seed, k):
    return int(np.random.SeedSequence(entropy=seed, spawn_key=(k,)).generate_state(1)[0])


def benchmark_plant(pole=0.9, gain=0.5):
    """Scalar innovation-form plant ``A = pole, B = C = 1, D = 0, K = gain``."""
    return SsModel([[pole]], [[1.0]], [[1.0]], [[0.0]], [[gain]])


def benchmark_loop(pole=0.9, controller_gain=0.4, innovation_sd=0.3, excitation_sd=1.0):
    """Scalar benchmark loop ``u = -controller_gain * y + r2`` with white ``r2``."""
    plant = benchmark_plant(pole)
    controller = SsModel(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[controller_gain]])
    noise = NoiseSpec.innovation(plant.K, [[innovation_sd ** 2]])
    return LoopSpec(plant, controller, noise, ExcitationSpec(ZERO, 0.0),
                    ExcitationSpec(WHITE, excitation_sd))


def benchmark_open(n_samples, seed, pole=0.9, innovation_sd=0.3, input_sd=1.0):
    """Open-loop innovation-form record of :func:`benchmark_plant` with white input."""
    plant = benchmark_plant(pole)
    u = gen_excitation(ExcitationSpec(WHITE, input_sd), 1, n_samples, child_seed(seed, 3))
    return simulate_open(plant, u, innovation_cov=[[innovation_sd ** 2]], seed=seed)


def _fmt(x):
    return format(float(x), ".17g")


def write_csv(data, path):
    """Write ``t,u1..,y1..`` rows with 17 significant digits."""
    header = ["t"] + [f"u{i + 1}" for i in range(data.n_u)] + [f"y{i + 1}" for i in range(data.n_y)]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for t in range(data.N):
            row = [str(t)] + [_fmt(v) for v in data.U[:, t]] + [_fmt(v) for v in data.Y[:, t]]
            fh.write(",".join(row) + "\n")


def read_csv(path, sample_period=1.0, closed_loop=False):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if not header or header[0] != "t":
            raise ValueError(f"{path}: header must start with 't'")
        u_cols = [i for i, h in enumerate(header) if h.startswith("u")]
        y_cols = [i for i, h in enumerate(header) if h.startswith("y")]
        if len(u_cols) + len(y_cols) + 1 != len(header) or not y_cols:
            raise ValueError(f"{path}: header must be t,u1..,y1..")
        rows = [[float(v) for v in r] for r in reader if r]
    arr = np.array(rows, dtype=float).reshape(-1, len(header))
    return DataSet(arr[:, u_cols].T, arr[:, y_cols].T, sample_period, None, closed_loop)
