import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from ocsens.cli import main
from ocsens.instances import example1
from ocsens.problem_io import problem_to_dict, save_problem
from ocsens.sensitivity import SensitivityReport
from ocsens.sets import Box, hausdorff_distance


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


class TestSolve:
    def test_example1(self, capsys, p1_path):
        code, out, _ = run(capsys, "solve", p1_path)
        d = json.loads(out)
        assert code == 0 and d["status"] == "OPTIMAL"
        np.testing.assert_allclose(d["z"], [-0.4, -0.8, 0.4], atol=1e-9)

    def test_example2(self, capsys, p2_path):
        code, out, _ = run(capsys, "solve", p2_path)
        np.testing.assert_allclose(json.loads(out)["z"], [-1, 1, 0, 1, 1], atol=1e-9)

    def test_wbar_override(self, capsys, p2_path):
        _, out, _ = run(capsys, "solve", p2_path, "--wbar", "0.1,0.2")
        assert json.loads(out)["value"] == pytest.approx(0.205, abs=1e-12)

    def test_missing_file(self, capsys, tmp_path):
        code, _, err = run(capsys, "solve", tmp_path / "nope.json")
        assert code == 1 and "error" in err

    def test_invalid_json(self, capsys, tmp_path):
        f = tmp_path / "bad.json"
        f.write_text("{\n  \"horizon\": }")
        code, _, err = run(capsys, "solve", f)
        assert code == 1 and "line 2" in err

    def test_wrong_parameter_length(self, capsys, p1_path):
        code, _, _ = run(capsys, "solve", p1_path, "--wbar", "0,0")
        assert code == 1

    def test_out_file(self, capsys, p1_path, tmp_path):
        f = tmp_path / "r.json"
        code, out, _ = run(capsys, "solve", p1_path, "--out", f)
        assert code == 0 and out == ""
        assert json.loads(f.read_text())["status"] == "OPTIMAL"

    def test_deterministic(self, capsys, p2_path):
        outs = [run(capsys, "sens", p2_path, "--mode", "polytope")[1] for _ in range(2)]
        assert outs[0] == outs[1]


class TestSens:
    def test_example1(self, capsys, p1_path):
        code, out, _ = run(capsys, "sens", p1_path)
        d = json.loads(out)
        assert code == 0 and d["mode"] == "SMOOTH_EXACT"
        assert d["subdiff_V"]["point"] == [1.3]

    def test_example2_auto_is_polytope(self, capsys, p2_path):
        _, out, _ = run(capsys, "sens", p2_path)
        rep = SensitivityReport.from_json(json.loads(out))
        assert rep.mode == "OUTER_POLYTOPE"
        assert hausdorff_distance(rep.subdiff_V, Box([0, -1], [0, 1])) <= 1e-12

    def test_example2_interval(self, capsys, p2_path):
        _, out, _ = run(capsys, "sens", p2_path, "--mode", "interval")
        d = json.loads(out)["subdiff_V"]
        assert d["lo"] == [-2, -2] and d["hi"] == [2, 2]

    def test_example2_joint(self, capsys, p2_path):
        _, out, _ = run(capsys, "sens", p2_path, "--mode", "polytope", "--coupling", "joint")
        rep = SensitivityReport.from_json(json.loads(out))
        assert hausdorff_distance(rep.subdiff_V, Box([0, -1], [0, 1])) <= 1e-12

    def test_smooth_mode_at_kink(self, capsys, p2_path):
        code, _, err = run(capsys, "sens", p2_path, "--mode", "smooth")
        assert code == 1 and "not smooth" in err

    def test_oracle_check(self, capsys, p1_path):
        _, out, _ = run(capsys, "sens", p1_path, "--grid-points", 5)
        assert json.loads(out)["oracle_check"]["passed"] is True

    def test_regularity_failure(self, capsys, tmp_path):
        f = tmp_path / "t0.json"
        save_problem(example1(T0=0.0), f)
        code, _, err = run(capsys, "sens", f)
        assert code == 3 and "kernel vector" in err


class TestVerify:
    @pytest.mark.parametrize("path", ["p1_path", "p2_path"])
    def test_examples_pass(self, capsys, request, path):
        code, out, _ = run(capsys, "verify", request.getfixturevalue(path))
        d = json.loads(out)
        assert code == 0 and d["passed"]

    def test_wrong_candidate(self, capsys, p1_path):
        code, out, _ = run(capsys, "verify", p1_path, "--candidate", "2.0")
        d = json.loads(out)
        assert code == 4 and not d["passed"]
        bad = [c for c in d["checks"] if c["check"] == "subgradient_inequality"][0]
        assert bad["detail"]["worst_point"][0] > 0

    def test_regularity_failure(self, capsys, tmp_path):
        f = tmp_path / "t0.json"
        save_problem(example1(T0=0.0), f)
        assert run(capsys, "verify", f)[0] == 4


class TestSweep:
    def test_example1_strictly_convex(self, capsys, p1_path):
        code, out, _ = run(capsys, "sweep", p1_path, "--grid-radius", 0.5, "--grid-points", 11)
        rows = _rows(out)
        assert code == 0 and len(rows) == 11
        assert list(rows[0]) == ["w_0", "V", "wstar_0"]
        V = np.array([float(r["V"]) for r in rows])
        assert np.all(np.diff(V, 2) > 0)
        # w* is the slope of V
        w = np.array([float(r["w_0"]) for r in rows])
        ws = np.array([float(r["wstar_0"]) for r in rows])
        np.testing.assert_allclose(np.gradient(V, w)[1:-1], ws[1:-1], atol=1e-9)

    def test_example2_value(self, capsys, p2_path):
        _, out, _ = run(capsys, "sweep", p2_path, "--grid-radius", 0.4, "--grid-points", 5)
        rows = _rows(out)
        assert len(rows) == 25
        for r in rows:
            w0, w1 = float(r["w_0"]), float(r["w_1"])
            assert float(r["V"]) == pytest.approx(0.5 * w0 ** 2 + abs(w1), abs=1e-10)
            if w1 == 0.0:
                assert r["wstar_1"] == ""
            elif r["wstar_1"]:
                assert float(r["wstar_0"]) == pytest.approx(w0, abs=1e-9)
                assert float(r["wstar_1"]) == pytest.approx(np.sign(w1), abs=1e-9)

    def test_zero_radius(self, capsys, p1_path):
        _, out, _ = run(capsys, "sweep", p1_path, "--grid-radius", 0)
        assert len(_rows(out)) == 1

    def test_json_format(self, capsys, p1_path):
        _, out, _ = run(capsys, "sweep", p1_path, "--grid-points", 3, "--format", "json")
        d = json.loads(out)
        assert len(d) == 3 and d[1]["V"] == pytest.approx(0.2)

    def test_too_many_parameters(self, capsys, tmp_path):
        d = problem_to_dict(example1())
        d["dims"]["param"] = [3]
        d["dynamics"][0]["T"] = [[1.0, 1.0, 1.0]]
        d["costs"][0] = {}
        d.pop("wbar", None)
        f = tmp_path / "big.json"
        f.write_text(json.dumps(d))
        code, _, err = run(capsys, "sweep", f)
        assert code == 1 and "at most 2" in err


def test_entry_point(p1_path):
    r = subprocess.run([sys.executable, "-m", "ocsens.cli", "sens", str(p1_path)],
                       capture_output=True, text=True, check=False)
    assert r.returncode == 0
    assert json.loads(r.stdout)["subdiff_V"]["point"] == [1.3]
