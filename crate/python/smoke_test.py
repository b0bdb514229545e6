"""Smoke test for the `tllm` extension module.

Build and install first:

    pip install maturin
    pip install --no-build-isolation -e crates/py

then run `python python/smoke_test.py`.
"""

import json
import math
import tempfile
from pathlib import Path

import tllm


def check_metrics():
    assert tllm.mse([1.0, 2.0], [1.0, 4.0]) == 2.0
    assert tllm.mae([1.0, 2.0], [1.0, 4.0]) == 1.0
    assert tllm.smape([0.0], [1.0]) == 200.0
    assert tllm.owa(3.0, 2.0, 3.0, 2.0) == 1.0
    assert tllm.naive2_forecast([1.0, 2.0, 3.0], 1, 2) == [3.0, 3.0]
    assert math.isclose(tllm.cka([1.0, 2.0, 3.0, 5.0], [2.0, 4.0, 6.0, 10.0], 4), 1.0)
    assert tllm.select_capacity(100, [(96, 64), (192, 96)]) == 64
    try:
        tllm.mse([1.0], [1.0, 2.0])
    except ValueError:
        pass
    else:
        raise AssertionError("shape mismatch accepted")


def tiny_config(out_dir):
    cfg = json.loads(tllm.RunConfig().to_json())
    cfg["output_dir"] = str(out_dir)
    cfg["seed"] = 3
    cfg["precision"] = "f64"
    cfg["data"]["source"] = {
        "kind": "synthetic",
        "generator": "sine_trend",
        "length": 200,
        "channels": 3,
        "params": {"period": 8.0, "noise": 0.05},
    }
    cfg["data"]["stride"] = 2
    m = cfg["model"]
    m.update(channels=3, lookback=8, horizon=4, d_model=8)
    m["input"].update(heads=2, dict_size=6)
    m["teacher"].update(kernel=3, capacity=[[4, 3], [8, 5]], d_pool=4, d_gate=4)
    m["student"].update(layers=2, heads=2, d_ff=8, lora_rank=2, lora_alpha=4.0)
    cfg["optim"].update(max_epochs=2, batch_size=16)
    cfg["analysis"]["probe_size"] = 2
    return tllm.RunConfig(json.dumps(cfg))


def check_pipeline():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        cfg = tiny_config(tmp / "run")
        assert cfg.problems() == []
        summary = tllm.train(cfg)
        assert len(summary["history"]) == 2
        assert all(math.isfinite(r["total"]) for r in summary["history"])

        artifact = tmp / "student.tllm"
        total, trainable, removed = tllm.export(str(tmp / "run" / "checkpoint.tllm"), str(artifact))
        assert 0 < trainable < total and removed > 0

        student = tllm.Student.load(str(artifact))
        assert (student.lookback, student.horizon, student.channels) == (8, 4, 3)
        window = [[0.1 * (t + c) for c in range(3)] for t in range(8)]
        pred = student.predict([window, window])
        assert len(pred) == 2 and len(pred[0]) == 4 and len(pred[0][0]) == 3
        assert pred[0] == pred[1]

        reports = tllm.evaluate(cfg, "student", str(artifact))
        assert reports[0]["model"] == "student" and reports[0]["mse"] >= 0.0
        naive2 = tllm.evaluate(cfg, "naive2", horizons=[4, 2])
        assert len(naive2) == 3 and naive2[-1]["horizon"] is None

        paths = tllm.analyze(str(tmp / "run"))
        assert any(str(p).endswith("layer_cka.csv") for p in paths)


def main():
    rows = tllm.synthesize("sine_trend", 48, 2, seed=1)
    assert len(rows) == 48 and len(rows[0]) == 2
    check_metrics()
    check_pipeline()
    print(f"tllm {tllm.__version__}: smoke test passed")


if __name__ == "__main__":
    main()
