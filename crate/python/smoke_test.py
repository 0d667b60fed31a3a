"""Build the extension, import it and exercise each binding once.

Usage: python3 python/smoke_test.py [--no-build]
"""

import importlib.util
import math
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load():
    if "--no-build" not in sys.argv:
        subprocess.run(
            ["cargo", "build", "--release", "-p", "stealthlqg-python"],
            cwd=ROOT,
            check=True,
        )
    suffix = {"darwin": "dylib", "win32": "dll"}.get(sys.platform, "so")
    prefix = "" if sys.platform == "win32" else "lib"
    built = ROOT / "target" / "release" / f"{prefix}stealthlqg_py.{suffix}"
    target = pathlib.Path(tempfile.mkdtemp()) / ("stealthlqg_py" + (".pyd" if sys.platform == "win32" else ".so"))
    shutil.copy(built, target)
    spec = importlib.util.spec_from_file_location("stealthlqg_py", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    m = load()
    assert "1d-mean-revert" in m.preset_names()
    assert "observation_noise" in m.preset_toml("1d-mean-revert")

    p = m.Problem.from_preset("1d-mean-revert", 0.3)
    assert abs(p.lam - 0.3) < 1e-15
    times = p.times()
    assert len(times) == 1001 and times[-1] == 0.5
    cov = p.filter_covariance()
    assert cov[0] == [0.0] and cov[-1][0] > 0.0
    assert p.existence_bound() > 0.0

    rho, tau = p.optimal_deterministic()
    exact = p.exact_objective(rho, tau)
    zero = p.exact_objective([[0.0]] * len(times), [[0.0]] * len(times))
    assert exact["objective"] < zero["objective"]
    assert exact["degradation"] > zero["degradation"]
    assert exact["n_paths"] is None

    mc = p.monte_carlo("zero", 200, seed=3)
    assert mc["stealthiness"] == 0.0 and mc["stealthiness_se"] == 0.0
    assert abs(mc["degradation"] - zero["degradation"]) < 5 * mc["degradation_se"]

    assert math.isfinite(p.adaptive_objective())

    try:
        m.Problem.from_preset("no-such-preset")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown preset accepted")
    try:
        p.exact_objective(rho[:-1], tau)
    except ValueError:
        pass
    else:
        raise AssertionError("short path accepted")

    with tempfile.TemporaryDirectory() as out:
        code = m.run_cli(["solve", "--preset", "1d-mean-revert", "--out", out])
        assert code == 0
        assert (pathlib.Path(out) / "lambda-0.3" / "bound.json").is_file()
        assert m.run_cli(["solve", "--preset", "nope", "--out", out]) == 2

    print("python smoke test passed")


if __name__ == "__main__":
    main()
