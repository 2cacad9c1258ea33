import json

import numpy as np
import pytest

from diffnea.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main


@pytest.fixture(scope="module")
def uniform(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert main(["gen", "--system", "pendulum", "--n", "100", "--out", str(out)]) == EXIT_OK
    return out


def dataset_file(out):
    return str(next(p for p in out.iterdir() if p.suffix == ".json" and p.name != "manifest.json"))


def test_gen_writes_dataset_and_manifest(uniform):
    man = json.loads((uniform / "manifest.json").read_text())
    assert man["command"] == "gen" and man["config"]["seed"] == 0 and len(man["config_hash"]) == 64
    assert dataset_file(uniform)


def test_gen_trajectory(tmp_path):
    assert main(["gen", "--system", "cartpole", "--kind", "trajectory", "--duration", "1", "--out", str(tmp_path)]) == 0


def test_identify_is_deterministic(uniform, tmp_path):
    runs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        argv = ["identify", "--model", "pendulum", "--dataset", dataset_file(uniform), "--iters", "60",
                "--actuator", "viscous", "--out", str(out)]
        assert main(argv) == EXIT_OK
        runs.append(out)
    for name in ("report.json", "model.json", "metrics.csv"):
        assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes()
    man = json.loads((runs[0] / "manifest.json").read_text())
    assert dataset_file(uniform) in man["inputs"]


@pytest.mark.parametrize("variant", ["nea", "blackbox", "nokin"])
def test_identify_variants(variant, uniform, tmp_path):
    assert main(["identify", "--model", "pendulum", "--dataset", dataset_file(uniform), "--variant", variant,
                 "--iters", "20", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "model.json").exists()


def test_rollout_horizon_zero_and_fitted_model(uniform, tmp_path):
    assert main(["rollout", "--model", "pendulum", "--x0", "0.5,0", "--horizon", "0", "--out", str(tmp_path)]) == 0
    rows = [l for l in (tmp_path / "rollout.csv").read_text().splitlines() if l and not l.startswith("#")]
    assert len(rows) == 2  # header and the initial state
    fit = tmp_path / "fit"
    main(["identify", "--model", "pendulum", "--dataset", dataset_file(uniform), "--variant", "nea", "--out", str(fit)])
    np.savetxt(tmp_path / "tau.csv", np.zeros((10, 1)), delimiter=",")
    assert main(["rollout", "--model", str(fit / "model.json"), "--x0", "0.5,0", "--torques",
                 str(tmp_path / "tau.csv"), "--out", str(tmp_path / "r")]) == EXIT_OK
    assert json.loads((tmp_path / "r" / "rollout.json").read_text())["steps"] == 10


def test_error_exit_codes(uniform, tmp_path, capsys):
    assert main(["rollout", "--model", "pendulum", "--x0", "1,2,3", "--out", str(tmp_path)]) == EXIT_DATA
    assert main(["identify", "--model", "pendulum", "--dataset", str(tmp_path / "none.json"),
                 "--out", str(tmp_path)]) == EXIT_DATA
    assert main(["identify", "--model", "cartpole", "--dataset", dataset_file(uniform), "--out", str(tmp_path)]) \
        == EXIT_DATA
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["rollout", "--model", str(bad), "--out", str(tmp_path)]) == EXIT_DATA
    assert main(["rollout", "--model", "pendulum", "--x0", "a,b", "--out", str(tmp_path)]) == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["identify", "--bogus"])
    assert exc.value.code == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_bench_uniform_pendulum(tmp_path):
    assert main(["bench", "--system", "pendulum", "--datasets", "uniform", "--variant", "diffnea",
                 "--actuator", "viscous", "--iters", "3000", "--horizons", "10,50", "--out", str(tmp_path)]) == 0
    lines = [l for l in (tmp_path / "bench.csv").read_text().splitlines() if not l.startswith("#")]
    header, row = lines[0].split(","), lines[1].split(",")
    assert float(row[header.index("one_step_loss")]) < 1e-8
    assert (tmp_path / "bench.svg").read_text().startswith("<svg")


def test_bic(tmp_path):
    assert main(["bic", "--duration", "2", "--iters", "50", "--out", str(tmp_path)]) == EXIT_OK
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["true_length"] == 0.4 and np.isfinite(rep["fitted_length"])
