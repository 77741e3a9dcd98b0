"""Smoke test for the peftopt Python module.

Build and install first:

    pip install maturin
    maturin develop --release -m crates/python/Cargo.toml

then run ``python python/smoke_test.py``.
"""

import json
import math
import tempfile
from pathlib import Path

import peftopt


def check_space():
    space = peftopt.SearchSpace.bert_base()
    assert space.cardinality() == 5_451_776
    assert peftopt.SearchSpace.bert_large().cardinality() == 22_330_474_496

    config = peftopt.Config([10, 3, 4, 8, 9], 12, 96, 1)
    assert config.layers == [3, 4, 8, 9, 10]
    assert space.param_count(config) == 837_120
    assert space.count_weights(config) == 837_120
    assert f"{100 * space.param_fraction(config):.2f}" == "0.76"

    coords = space.encode(config)
    assert len(coords) == 15
    assert space.decode(coords) == config
    assert len(space.neighbors(config)) == 18
    assert space.config_at(space.index_of(config)) == config
    assert peftopt.Config.from_json(config.to_json()) == config

    try:
        peftopt.SearchSpace(2, 8, [1, 8], 100)
    except ValueError:
        pass
    else:
        raise AssertionError("invalid grid accepted")


def check_pareto():
    points = [(0.9, 0.5), (0.8, 0.2), (0.7, 0.4)]
    assert peftopt.dominates((0.8, 0.2), (0.7, 0.4))
    assert peftopt.non_dominated(points) == [1, 0]
    assert math.isclose(peftopt.hypervolume(points[:2], (0.0, 1.0)), 0.69)
    assert peftopt.nadir(points[:2]) == (0.8, 0.5)


def check_gp():
    xs = [[0.0], [1.0]]
    ensemble = peftopt.fit_gp(xs, [0.0, 1.0], restarts=2, steps=50, fixed_noise=1e-10)
    assert len(ensemble) == 2
    for mean, var in ensemble.predict([0.0]):
        assert abs(mean) < 1e-3 and var >= 0.0


def check_search():
    space = peftopt.SearchSpace(4, 16, [0, 2, 4, 8, 16], 10_000)
    land = peftopt.SyntheticLandscape(space, landscape_seed=7)
    assert land.score(space.empty_config(), 1.0, 0) != land.score(space.empty_config(), 1.0, 1)
    with tempfile.TemporaryDirectory() as tmp:
        state_path = Path(tmp) / "state.jsonl"
        kwargs = dict(seed=1, n_init=6, n_total=10, restarts=2, steps=30, mc_samples=16)
        run = peftopt.search(space, land, state_path=str(state_path), **kwargs)
        again = peftopt.search(space, land, **kwargs)
        assert [o["config"] for o in run["observations"]] == [o["config"] for o in again["observations"]]
        assert len(run["observations"]) == 10
        hv = [h for _, h in run["trajectory"]]
        assert hv == sorted(hv)
        loaded = peftopt.load_state(str(state_path))
        assert [o["score"] for o in loaded["observations"]] == [o["score"] for o in run["observations"]]

        rand = peftopt.search(space, land, random=True, **kwargs)
        assert [o["config"] for o in rand["observations"][:6]] == [o["config"] for o in run["observations"][:6]]

        table = Path(tmp) / "table.jsonl"
        rows = []
        for i in range(space.cardinality()):
            c = space.config_at(i)
            rows.append(json.dumps({"config": json.loads(c.to_json()), "score": land.mean_score(c)}))
        table.write_text("\n".join(rows) + "\n")
        bench = peftopt.TabularBenchmark.load(str(table))
        assert len(bench) == space.cardinality()
        tab = peftopt.search(space, bench, **kwargs)
        assert len(tab["front"]) >= 1


if __name__ == "__main__":
    check_space()
    check_pareto()
    check_gp()
    check_search()
    print("smoke test passed")
