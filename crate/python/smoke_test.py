"""Smoke test for the Python bindings.

Builds the extension and the CLI with cargo, trains a tiny model on a
generated scene through the CLI, then checks the bindings against it.

    python3 python/smoke_test.py [--release]
"""

import argparse
import importlib.util
import json
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def build(release):
    cmd = ["cargo", "build", "-p", "factoformer-python", "-p", "factoformer-cli"]
    if release:
        cmd.append("--release")
    subprocess.run(cmd, cwd=ROOT, check=True)
    target = ROOT / "target" / ("release" if release else "debug")
    return target / "libpyfactoformer.so", target / "factoformer"


def load_module(library, workdir):
    # Python imports extension modules by their module name.
    module_path = workdir / "pyfactoformer.so"
    shutil.copy(library, module_path)
    spec = importlib.util.spec_from_file_location("pyfactoformer", module_path)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--release", action="store_true")
    args = parser.parse_args()
    library, cli = build(args.release)

    with tempfile.TemporaryDirectory() as tmp:
        tmp = pathlib.Path(tmp)
        ff = load_module(library, tmp)

        assert ff.count_params("spectral", 7, 200) == 32965
        assert ff.count_params("spatial", 7, 200) == 119216
        assert ff.attention_cost(200, 49) == (62001, 42401)
        fact, joint = ff.analytic_mflops(7, 200, 16)
        assert joint >= 2 * fact, (fact, joint)

        m = ff.metrics([[40, 10], [20, 30]])
        assert abs(m["overall_accuracy"] - 0.70) < 1e-12
        assert abs(m["kappa"] - 0.40) < 1e-12
        assert len(ff.sample_mask(49, 0.7, seed=1)) == 34
        try:
            ff.sample_mask(10, 1.0)
        except ValueError:
            pass
        else:
            raise AssertionError("ratio 1.0 accepted")

        scene = pathlib.Path(ff.write_synthetic_scene(tmp / "data", size=16, bands=8, classes=3, per_class=5))
        out = tmp / "run"
        common = ["--data-root", str(tmp / "data"), "--dataset", "synthetic", "--patch", "3", "--out", str(out)]
        subprocess.run([str(cli), "finetune", "--scratch", "--epochs", "5", *common], check=True, capture_output=True)

        model = ff.Model.load(str(out / "checkpoints" / "model.ckpt"))
        assert (model.patch_size, model.bands, model.classes) == (3, 8, 3)
        result = model.evaluate(str(scene / "cube.json"), str(scene / "labels.json"), str(scene / "split.json"))
        report = json.loads((out / "reports" / "finetune.json").read_text())
        assert result["confusion"] == report["confusion"], "bindings and CLI disagree"
        assert len(model.logits([0.0] * (3 * 3 * 8))) == 3

    print("python smoke test passed")


if __name__ == "__main__":
    sys.exit(main())
