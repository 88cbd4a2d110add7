import json
import os
import subprocess
import sys

import pytest

SMALL_CONFIG = """\
synth:
  budgets: [1.0e+19, 1.0e+20]
  n_params: [1.0e+8, 1.0e+9, 1.0e+10]
  granularities: [1, 2, 3]
  noise_sigma: 0.0
fit:
  max_starts: 60
branch_fit:
  max_starts: 60
"""


def run_cli(args, cwd, env_extra=None):
    env = dict(os.environ)
    if env_extra:
        env.update(env_extra)
    proc = subprocess.run(
        [sys.executable, "-m", "famscale", *args],
        cwd=cwd,
        env=env,
        capture_output=True,
        text=True,
        timeout=600,
    )
    return proc.returncode, proc.stdout, proc.stderr


def strip_timestamps(data: bytes) -> bytes:
    lines = []
    for line in data.decode("utf-8").splitlines():
        if line.startswith("# created_at:") or '"created_at":' in line:
            continue
        lines.append(line)
    return "\n".join(lines).encode("utf-8")


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "config.yaml").write_text(SMALL_CONFIG)
    code, out, err = run_cli(
        ["synth", "--config", "config.yaml", "--out", "runs.csv", "--seed", "7"], d
    )
    assert code == 0, err
    code, out, err = run_cli(
        ["synth", "--config", "config.yaml", "--out", "holdout.csv", "--seed", "8"], d
    )
    assert code == 0, err
    code, out, err = run_cli(
        ["synth", "--kind", "branches", "--config", "config.yaml", "--out", "branches.csv",
         "--seed", "7"], d
    )
    assert code == 0, err
    return d


class TestSynth:
    def test_rerun_identical(self, workdir):
        first = (workdir / "runs.csv").read_bytes()
        code, _, err = run_cli(
            ["synth", "--config", "config.yaml", "--out", "runs.csv", "--seed", "7"], workdir
        )
        assert code == 0, err
        assert strip_timestamps(first) == strip_timestamps((workdir / "runs.csv").read_bytes())

    def test_embeds_manifest(self, workdir):
        head = (workdir / "runs.csv").read_text().splitlines()[0]
        assert head.startswith("# manifest:")
        manifest = json.loads(head.removeprefix("# manifest:"))
        assert manifest["seed"] == 7
        assert manifest["toolkit_version"]
        assert len(manifest["config_digest"]) == 64


class TestFitFamilial:
    def test_fit_and_holdout(self, workdir):
        code, out, err = run_cli(
            ["fit-familial", "--runs", "runs.csv", "--holdout", "holdout.csv",
             "--config", "config.yaml", "--out", "fit.json"],
            workdir,
        )
        assert code == 0, err
        doc = json.loads((workdir / "fit.json").read_text())
        assert doc["law"] == "familial"
        assert doc["holdout"]["max_rel_error"] <= 0.01
        assert "fitted familial law" in out
        assert (workdir / "fit_residuals.csv").exists()

    def test_rerun_byte_identical(self, workdir):
        run_cli(["fit-familial", "--runs", "runs.csv", "--config", "config.yaml",
                 "--out", "det.json"], workdir)
        first = (workdir / "det.json").read_bytes()
        first_res = (workdir / "det_residuals.csv").read_bytes()
        run_cli(["fit-familial", "--runs", "runs.csv", "--config", "config.yaml",
                 "--out", "det.json"], workdir)
        assert strip_timestamps(first) == strip_timestamps((workdir / "det.json").read_bytes())
        assert strip_timestamps(first_res) == strip_timestamps(
            (workdir / "det_residuals.csv").read_bytes()
        )

    def test_thread_count_does_not_change_results(self, workdir):
        run_cli(["fit-familial", "--runs", "runs.csv", "--config", "config.yaml",
                 "--out", "t.json"], workdir, env_extra={"FAMSCALE_THREADS": "1"})
        single = strip_timestamps((workdir / "t.json").read_bytes())
        run_cli(["fit-familial", "--runs", "runs.csv", "--config", "config.yaml",
                 "--out", "t.json"], workdir, env_extra={"FAMSCALE_THREADS": "4"})
        assert single == strip_timestamps((workdir / "t.json").read_bytes())

    def test_missing_input_exits_2(self, workdir):
        code, _, err = run_cli(
            ["fit-familial", "--runs", "absent.csv", "--out", "x.json"], workdir
        )
        assert code == 2
        assert "absent.csv" in err

    def test_invalid_rows_exit_2_with_row_messages(self, workdir):
        bad = workdir / "bad.csv"
        bad.write_text(
            "n_params,tokens,granularity,loss,flops_group,flops\n"
            "1e9,2e10,2,-1,g,\n"
        )
        code, _, err = run_cli(["fit-familial", "--runs", "bad.csv", "--out", "x.json"], workdir)
        assert code == 2
        assert "row 1" in err and "loss" in err


class TestFitBranch:
    def test_fit_reports_products(self, workdir):
        code, out, err = run_cli(
            ["fit-branch", "--branches", "branches.csv", "--config", "config.yaml",
             "--out", "bfit.json"],
            workdir,
        )
        assert code == 0, err
        doc = json.loads((workdir / "bfit.json").read_text())
        assert doc["law"] == "branch"
        assert "alpha_b_dd_a" in doc["extras"]
        assert "identifiable products" in out

    def test_missing_upstream_marks_unidentifiable(self, workdir):
        lines = (workdir / "branches.csv").read_text().splitlines()
        kept = [ln for ln in lines if ln.startswith(("#", "upstream")) or ln.startswith("0,")]
        (workdir / "branches_p0.csv").write_text("\n".join(kept) + "\n")
        code, _, err = run_cli(
            ["fit-branch", "--branches", "branches_p0.csv", "--config", "config.yaml",
             "--out", "b0.json"],
            workdir,
        )
        assert code == 0, err
        doc = json.loads((workdir / "b0.json").read_text())
        assert "log_alpha_b" in doc["unidentifiable"]


class TestEval:
    def test_g_ratio(self, workdir):
        code1, out1, _ = run_cli(
            ["eval", "--params", "fit.json", "--n", "1e9", "--d", "2e10", "--g", "1"], workdir
        )
        code2, out2, _ = run_cli(
            ["eval", "--params", "fit.json", "--n", "1e9", "--d", "2e10", "--g", "2"], workdir
        )
        assert code1 == code2 == 0
        doc = json.loads((workdir / "fit.json").read_text())
        gamma = doc["params"]["linear"]["gamma"]
        ratio = float(out2) / float(out1)
        assert ratio == pytest.approx(2**gamma, rel=1e-9)

    def test_nonpositive_n_exits_2(self, workdir):
        code, _, _ = run_cli(
            ["eval", "--params", "fit.json", "--n", "-1", "--d", "2e10", "--g", "1"], workdir
        )
        assert code == 2


class TestFrontierPlanEl:
    def test_frontier_outputs(self, workdir):
        code, _, err = run_cli(
            ["frontier", "--params", "fit.json", "--out", "frontier.csv",
             "--granularity", "1", "--flops", "1e19,1e20,1e21"],
            workdir,
        )
        assert code == 0, err
        lines = [ln for ln in (workdir / "frontier.csv").read_text().splitlines()
                 if not ln.startswith("#")]
        assert lines[0] == "flops,n_opt,d_opt,loss_opt,granularity,bracket_edge"
        assert len(lines) == 4
        assert (workdir / "frontier.json").exists()

    def test_plan_has_seven_default_rows(self, workdir):
        code, out, err = run_cli(["plan", "--flops", "1e19", "--out", "plan.csv"], workdir)
        assert code == 0, err
        lines = [ln for ln in (workdir / "plan.csv").read_text().splitlines()
                 if not ln.startswith("#")]
        assert len(lines) == 8  # header + 7 architectures
        # multi-exit rows receive strictly fewer tokens than their dense twins
        rows = {ln.split(",")[0]: ln.split(",") for ln in lines[1:]}
        for fam, dense in (("fam2B", "2B"), ("fam3B", "3B"), ("fam4B", "4B")):
            assert float(rows[fam][3]) < float(rows[dense][3])

    def test_frontier_contours(self, workdir):
        code, _, err = run_cli(
            ["frontier", "--params", "fit.json", "--out", "fc.csv", "--granularity", "1",
             "--flops", "1e20", "--contour-targets", "2.4,2.8", "--contour-points", "16"],
            workdir,
        )
        assert code == 0, err
        lines = [ln for ln in (workdir / "fc_contours.csv").read_text().splitlines()
                 if not ln.startswith("#")]
        assert lines[0] == "target_loss,n_params,tokens,feasible"
        assert len(lines) == 1 + 2 * 16

    def test_el_writes_per_granularity_files(self, workdir):
        code, _, err = run_cli(
            ["el", "--params", "fit.json", "--out", "el.csv", "--granularities", "3,4",
             "--points-per-decade", "2"],
            workdir,
        )
        assert code == 0, err
        assert (workdir / "el_g3.csv").exists()
        assert (workdir / "el_g4.csv").exists()
        body = [ln for ln in (workdir / "el.csv").read_text().splitlines()
                if not ln.startswith("#")]
        assert body[0] == "flops,granularity,dense_avg_loss,familial_loss,el,bracket_edge"
        els = [float(ln.split(",")[4]) for ln in body[1:]]
        assert all(e > 1.0 for e in els)
