"""Drive the histoseg CLI end to end on a synthetic dataset.

Generates slides and masks, writes a manifest and a config file, then runs
normalize -> patchify -> train -> predict -> evaluate exactly as a user
would from the shell.
"""

import json
from pathlib import Path

import histoseg as hs
from histoseg import cli
from histoseg import synthetic as syn
from histoseg.config import default_config, save_config

ROOT = Path(__file__).parent / "output" / "pipeline"
ROOT.mkdir(parents=True, exist_ok=True)

rng = hs.SeededRng(31415)
manifest_path, records = syn.write_synthetic_dataset(ROOT / "data", rng, n_train=2, n_test=1)
print(f"wrote {len(records)} slides and {manifest_path}")

config = default_config(
    records[0].image_path,
    str(ROOT / "out"),
    patch_size=64,
    margin=16,
    levels=2,
    base_channels=4,
    seed=77,
    epochs=60,
)
config_path = ROOT / "config.toml"
save_config(config, config_path)
print(f"wrote {config_path}")

common = ["--config", str(config_path), "--manifest", str(manifest_path)]
for step in (
    ["normalize", *common],
    ["patchify", *common],
    ["train", *common],
):
    print(f"\n$ histoseg {' '.join(step)}")
    code = cli.main(step)
    assert code == 0, f"step failed with exit code {code}"

test_image = [r for r in records if r.split == "test"][0].image_path
predict = ["predict", "--config", str(config_path), "--image", test_image]
print(f"\n$ histoseg {' '.join(predict)}")
assert cli.main(predict) == 0

evaluate = ["evaluate", *common]
print(f"\n$ histoseg {' '.join(evaluate)}")
assert cli.main(evaluate) == 0

report = json.loads((ROOT / "out" / "eval_report.json").read_text())
print("\neval_report.json:")
for image in report["images"]:
    print(f"  {Path(image['id']).name}: dice {image['dice']:.4f}")
print(f"  mean_dice {report['mean_dice']:.4f}")
print(f"\nartifacts under {ROOT / 'out'}")
