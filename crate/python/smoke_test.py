"""Smoke test for the grabar_py extension: build with `maturin develop -m crates/py/Cargo.toml`."""

import json
import tempfile
from pathlib import Path

import grabar_py as g


def main():
    assert "bar" in g.object_names()
    samples = g.generate_dataset(4, seed=3, size=32)
    s = samples[0]
    assert (s.height, s.width) == (32, 32)
    assert len(s.gt()) == 32 * 32 and len(s.hand_image()) == 32 * 32 * 3
    ov = s.overlap()

    # Ground truth scores 1 against itself and survives the compose oracle.
    assert g.odsc(32, 32, s.gt(), s.gt(), ov) == 1.0
    frame = g.compose(s, s.gt())
    assert len(frame) == 32 * 32 * 3
    pp = g.postprocess(32, 32, s.gt(), s.hand_fg(), s.object_fg())
    assert set(pp) <= {g.BACKGROUND, g.OBJECT, g.HAND}

    assert all(passed for _, _, _, passed in g.gradcheck(size=8, instances=2, seed=1))

    model = g.train(samples, iterations=4, seg_iterations=2, batch_size=2, seed=1, augment=False)
    assert model.iteration == 4 and len(model.loss_history()) == 4
    mask = model.predict(s, postprocess=True)
    assert len(mask) == 32 * 32
    report = json.loads(model.evaluate(samples))
    assert sum(r["sample_count"] for r in report["rows"]) == 4

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        g.write_dataset(tmp / "data", samples)
        assert len(g.read_dataset(tmp / "data")) == 4
        model.save(tmp / "m.grabar")
        again = g.Model.load(tmp / "m.grabar")
        assert again.predict(s) == model.predict(s)
        summary = json.loads(again.compose_dir(tmp / "data", tmp / "frames"))
        assert summary["processed"] == 4 and not summary["failed"]
        assert g.cli(["gen-data", "--count", "2", "--size", "32", "--out", str(tmp / "cli"), "--log-level", "warn"]) == 0
        assert g.cli(["no-such-command"]) == 2

    try:
        g.Model.load("/nonexistent.grabar")
    except FileNotFoundError:
        pass
    else:
        raise AssertionError("missing checkpoint should raise")
    print("python smoke test passed")


if __name__ == "__main__":
    main()
