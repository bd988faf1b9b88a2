"""Smoke test for the Python bindings: simulate, fit, inspect, run a tiny study."""

import math
import tempfile
from pathlib import Path

import lbgm


def main():
    design = lbgm.Design.ten_wave_decreasing()
    design.n = 200
    sample = design.generate(seed=1)
    assert sample.n == 200 and sample.outcomes == ["y", "z"]
    assert sample.problems() == []

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "data.csv"
        sample.to_csv(str(path))
        again = lbgm.Sample.from_csv(str(path))
        assert again.n == sample.n

    spec = design.model_spec()
    result = lbgm.fit(sample, spec)
    assert result.status == "Converged", result
    est = result.estimates()
    se = result.standard_errors()
    assert set(est) == set(result.names) == set(se)
    assert abs(est["y.mu_eta0"] - 50.0) < 2.0
    assert all(s is not None and s > 0 for s in se.values())
    values = [est[n] for n in result.names]
    assert math.isclose(result.deviance_at(sample, values), result.deviance, rel_tol=1e-12)

    table = result.parameter_table()
    assert table[0]["parameter"] == "y.mu_eta0"
    derived = result.derived()
    panels = {row["panel"] for row in derived}
    assert panels == {"Mean", "Variance", "Correlation", "Change"}

    uni = lbgm.ModelSpec([("y", 10, 1)])
    assert lbgm.fit(sample, uni).status == "Converged"
    try:
        lbgm.fit(sample, lbgm.ModelSpec([("science", 10, 1)]))
    except ValueError as e:
        assert "science" in str(e)
    else:
        raise AssertionError("unknown outcome accepted")

    records = [(str(i), "y", w + 1, w + 0.1 * i, 10.0 + 2.0 * w + i) for i in range(5) for w in range(3)]
    assert lbgm.Sample.from_records(records).n == 5

    small = lbgm.Design.from_toml(design.to_toml())
    small.n = 100
    summary = lbgm.study(small, reps=2, seed=3)
    assert summary["converged"] == 2
    assert {m["parameter"] for m in summary["metrics"]} == set(result.names)

    print(f"ok: deviance {result.deviance:.3f}, {len(result.names)} parameters")


if __name__ == "__main__":
    main()
