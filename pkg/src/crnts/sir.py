"""Discrete-time stochastic SIR model and the external-simulator plug-in bridge.

Each run draws from a private Philox stream keyed on the integer seed, so a
trajectory depends on ``(beta, gamma, seed)`` and nothing else.
"""
from __future__ import annotations

import json
import subprocess
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, SimulatorError


@dataclass(frozen=True)
class SirConfig:
    beta: float
    gamma: float
    seed: int
    N: int = 1010
    S0: int = 1000
    I0: int = 10
    R0: int = 0
    T: int = 100

    def validate(self) -> None:
        for name in ("N", "S0", "I0", "R0", "T", "seed"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise ConfigError(f"{name} must be a nonnegative integer, got {value!r}")
        if self.S0 + self.I0 + self.R0 != self.N:
            raise ConfigError(
                f"S0 + I0 + R0 = {self.S0 + self.I0 + self.R0} does not equal N = {self.N}"
            )
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if not (np.isfinite(self.beta) and self.beta >= 0):
            raise ConfigError(f"beta must be finite and >= 0, got {self.beta}")
        if not (np.isfinite(self.gamma) and self.gamma >= 0):
            raise ConfigError(f"gamma must be finite and >= 0, got {self.gamma}")


@dataclass
class Trajectory:
    """One simulator realization: named output series over integer times."""

    times: np.ndarray
    outputs: dict[str, np.ndarray]
    x: tuple[float, ...] | None = None
    seed: int | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times)
        self.outputs = {k: np.asarray(v) for k, v in self.outputs.items()}
        n = len(self.times)
        for name, series in self.outputs.items():
            if series.shape != (n,):
                raise ValueError(f"output {name!r} has shape {series.shape}, expected ({n},)")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.outputs[name]

    def to_json(self) -> str:
        return json.dumps(
            {"t": self.times.tolist(), "outputs": {k: v.tolist() for k, v in self.outputs.items()}}
        )


def _rng_for_seed(seed: int) -> np.random.Generator:
    # counter-based generator keyed on the seed only
    return np.random.Generator(np.random.Philox(key=int(seed)))


def simulate_sir(config: SirConfig) -> Trajectory:
    """Run the binomial-chain SIR model for ``config.T`` steps.

    Per step, new infections X_t ~ Binom(S_t, 1 - exp(-beta I_t / N)) are drawn
    before recoveries Y_t ~ Binom(I_t, 1 - exp(-gamma)).
    """
    config.validate()
    rng = _rng_for_seed(config.seed)
    T, N = config.T, config.N
    S = np.empty(T + 1, dtype=np.int64)
    I = np.empty(T + 1, dtype=np.int64)
    R = np.empty(T + 1, dtype=np.int64)
    S[0], I[0], R[0] = config.S0, config.I0, config.R0
    p_rec = -np.expm1(-config.gamma)
    for t in range(T):
        s, i = int(S[t]), int(I[t])
        if i == 0:
            # absorbed: nothing can change any more
            S[t + 1:], I[t + 1:], R[t + 1:] = s, 0, R[t]
            break
        p_inf = -np.expm1(-config.beta * i / N)
        x_t = int(rng.binomial(s, p_inf)) if s > 0 else 0
        y_t = int(rng.binomial(i, p_rec))
        S[t + 1] = s - x_t
        I[t + 1] = i + x_t - y_t
        R[t + 1] = R[t] + y_t
    return Trajectory(
        times=np.arange(T + 1),
        outputs={"S": S, "I": I, "R": R},
        x=(float(config.beta), float(config.gamma)),
        seed=int(config.seed),
    )


def sir_simulator(x: Sequence[float], seed: int, **overrides) -> Trajectory:
    """Adapter with the ``(x, seed) -> Trajectory`` signature used by the optimizer."""
    return simulate_sir(SirConfig(beta=float(x[0]), gamma=float(x[1]), seed=int(seed), **overrides))


@dataclass(frozen=True)
class PluginHandle:
    """A child-process simulator speaking one-line JSON over stdin/stdout."""

    path: str
    timeout: float = 60.0
    args: tuple[str, ...] = field(default_factory=tuple)

    def command(self) -> list[str]:
        path = str(Path(self.path))
        if path.endswith(".py"):
            return [sys.executable, path, *self.args]
        return [path, *self.args]

    def __call__(self, x: Sequence[float], seed: int) -> Trajectory:
        return external_simulate(self, x, seed)


def parse_plugin_response(line: str) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    data = json.loads(line)
    if not isinstance(data, Mapping) or "t" not in data or "outputs" not in data:
        raise ValueError("response must be an object with 't' and 'outputs'")
    times = np.asarray(data["t"])
    if times.ndim != 1 or not np.issubdtype(times.dtype, np.integer):
        raise ValueError("'t' must be a list of integers")
    outputs = {}
    for name, series in dict(data["outputs"]).items():
        arr = np.asarray(series)
        if arr.ndim != 1 or not np.issubdtype(arr.dtype, np.number) or arr.dtype == bool:
            raise ValueError(f"output {name!r} is not a numeric list")
        outputs[str(name)] = arr
    return times, outputs


def external_simulate(plugin: PluginHandle, x: Sequence[float], seed: int) -> Trajectory:
    request = json.dumps({"x": [float(v) for v in x], "seed": int(seed)}) + "\n"
    try:
        proc = subprocess.run(
            plugin.command(),
            input=request,
            capture_output=True,
            text=True,
            timeout=plugin.timeout,
        )
    except subprocess.TimeoutExpired as exc:
        raise SimulatorError(f"plugin timed out after {plugin.timeout}s", str(exc.stdout or "")) from exc
    except OSError as exc:
        raise SimulatorError(f"could not start plugin {plugin.path!r}: {exc}") from exc
    if proc.returncode != 0:
        raise SimulatorError(
            f"plugin exited with status {proc.returncode}: {proc.stderr.strip()}", proc.stdout
        )
    lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
    if not lines:
        raise SimulatorError("plugin produced no output", proc.stdout)
    try:
        times, outputs = parse_plugin_response(lines[-1])
        return Trajectory(times, outputs, x=tuple(float(v) for v in x), seed=int(seed))
    except (ValueError, TypeError) as exc:
        raise SimulatorError(f"malformed plugin response: {exc}", proc.stdout) from exc


def serve_plugin(stdin=None, stdout=None) -> None:
    """Answer one plug-in request on stdin with the in-process SIR model."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    request = json.loads(stdin.readline())
    traj = sir_simulator(request["x"], request["seed"])
    stdout.write(traj.to_json() + "\n")
    stdout.flush()


if __name__ == "__main__":
    serve_plugin()
