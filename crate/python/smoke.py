"""Smoke test for the crossview_py extension.

Build and install first:
    pip install --no-build-isolation ./crates/py
then run:
    python python/smoke.py
"""

import json
import math
import pathlib
import tempfile

import numpy as np

import crossview_py as cv


def main():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = pathlib.Path(tmp)
        train_dir = cv.synth_data(24, str(tmp / "train"), seed=1)
        test_dir = cv.synth_data(4, str(tmp / "test"), seed=2, split="test")

        paths = sorted((pathlib.Path(train_dir) / "aerial").glob("*.png"))
        assert len(paths) == 24, len(paths)
        images = [cv.load_png(str(p)) for p in paths]
        data, h, w = images[0]
        assert (h, w) == (64, 64) and len(data) == h * w * 3

        a = np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3)
        b = np.frombuffer(images[1][0], dtype=np.uint8).reshape(h, w, 3)
        assert cv.psnr(data, data, h, w) == math.inf
        assert abs(cv.ssim(data, data, h, w) - 1.0) < 1e-12
        mse = np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2)
        assert abs(cv.psnr(a.tobytes(), b.tobytes(), h, w) - 10 * math.log10(255**2 / mse)) < 1e-9
        l1 = np.mean(np.abs(a.astype(np.int64) - b.astype(np.int64)))
        assert abs(cv.mean_abs_diff(a.tobytes(), b.tobytes(), h, w) - l1) < 1e-9

        n = 10
        assert abs(cv.inception_score([[1.0 / n] * n] * 5) - 1.0) < 1e-9
        onehot = np.eye(n).tolist()
        assert abs(cv.inception_score(onehot) - n) < 1e-9
        assert cv.topk_accuracy(onehot, onehot, 1) == 100.0
        smoothed = cv.topk_smooth([0.5, 0.3, 0.1, 0.1], 2)
        assert abs(sum(smoothed) - 1.0) < 1e-12 and smoothed[:2] == [0.5, 0.3]

        training = [(p.stem, img[0]) for p, img in zip(paths, images)]
        nearest = cv.knn(data, training, h, w, 3)
        assert nearest[0] == (paths[0].stem, 0.0), nearest
        assert [d for _, d in nearest] == sorted(d for _, d in nearest)

        config = {
            "arch": "fork",
            "resolution": 64,
            "epochs": 1,
            "batch_size": 8,
            "width_divisor": 16,
            "seed": 5,
            "out_dir": str(tmp / "run"),
            "train_manifest": train_dir,
            "eval_manifest": test_dir,
        }
        summary = cv.train(json.dumps(config))
        assert len(summary["epochs"]) == 1
        assert pathlib.Path(summary["final_checkpoint"]).is_file()
        print(json.dumps({k: summary[k] for k in ("checksum", "initial_heldout_l1")}))
    print("smoke ok")


if __name__ == "__main__":
    main()
