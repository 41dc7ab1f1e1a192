"""Shared end-to-end CLI run used by the CLI and acceptance tests."""

from ensemblecast.cli import main


def run_pipeline(out, presets=("gauss_0.01",), n_starts=3, stride=5, leads="1,5,15"):
    out = str(out)
    data = f"{out}/data.ofs"
    steps = [
        ["synth", "--out", out],
        ["stats", "--data", data, "--out", out],
        ["train", "--data", data, "--out", out],
        ["forecast", "--data", data, "--model", f"{out}/model.omp", "--out", out,
         "--n-starts", str(n_starts), "--stride", str(stride)],
    ]
    for preset in presets:
        steps.append(["ensemble", "--data", data, "--model", f"{out}/model.omp", "--out", out, "--preset", preset,
                      "--n-starts", str(n_starts), "--stride", str(stride)])
    steps.append(["verify", "--data", data, "--out", out])
    report = ["report", "--out", out, "--reference", f"{out}/metrics_deterministic.csv", "--leads", leads]
    for preset in presets:
        report += ["--candidate", f"{preset}={out}/metrics_{preset}.csv"]
    steps.append(report)
    for argv in steps:
        code = main(argv)
        if code != 0:
            raise AssertionError(f"ensemblecast {' '.join(argv)} exited with {code}")
