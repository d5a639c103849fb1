import json
import subprocess
import sys
import xml.etree.ElementTree as ET
from pathlib import Path

import jsonschema
import pytest

from spurious_lens import __version__, load_schema
from spurious_lens.cli import main

GAUSS_EXACT = {
    "sigma_inv": 1.0, "sigma_spu": 0.5, "mu_spu": 2.0, "p_spu": 0.95,
    "sigma_xi": 0.1, "n": 2000, "d_I": 16, "d_T": 16, "mode": "TheoremExact",
}
GAUSS_DEF1 = {
    "sigma_inv": 1.0, "sigma_spu": 0.5, "mu_spu": 1.0, "p_spu": 0.9,
    "sigma_xi": 0.01, "n": 2000, "d_I": 16, "d_T": 16, "mode": "Def1",
}
DISCRETE = {"num_classes": 2, "p_inv": 0.75, "p_spu": 0.9, "n_train": 400}

PREDICTIONS = "sample_id,true_label,group,background,pred_1\n" + "".join(
    f"e{i},bear,easy,snow,{'bear' if i < 9 else 'wolf'}\n" for i in range(10)
) + "".join(
    f"h{i},bear,hard,grass,{'bear' if i < 4 else 'wolf'}\n" for i in range(10)
)

DISCOVER_PREDICTIONS = "sample_id,true_label,group,background,pred_1\n" + "".join(
    f"s{i},bear,unassigned,snow,{'bear' if i < 19 else 'wolf'}\n" for i in range(20)
) + "".join(
    f"g{i},bear,unassigned,grass,{'bear' if i < 8 else 'wolf'}\n" for i in range(20)
)

SIMILARITIES = ("sample_id,cat,dog,fish\n"
                "s1,0.9,0.5,0.1\ns2,0.8,0.6,0.2\ns3,0.7,0.7,0.0\n")

POINTS = "easy,hard\n0.6,0.4\n0.8,0.6\n0.7,0.52\n"


def write(path: Path, text: str) -> str:
    path.write_text(text, encoding="utf-8")
    return str(path)


def write_json(path: Path, obj) -> str:
    return write(path, json.dumps(obj))


def read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def manifest_of(out) -> dict:
    return read_json(Path(out).with_suffix(".manifest.json"))


def check_schema(payload: dict, name: str) -> None:
    jsonschema.validate(payload, load_schema(name))


class TestVerifyTheorem:
    def test_pass_exit_zero(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "c.json", GAUSS_EXACT)
        out = str(tmp_path / "report.json")
        rc = main(["verify-theorem", "--config", cfg, "--mc", "20000",
                   "--seed", "0", "--out", out])
        captured = capsys.readouterr()
        assert rc == 0
        assert captured.out == ""
        assert "pass" in captured.err
        payload = read_json(out)
        assert payload["passed"] is True
        check_schema(payload, "verification_report")
        check_schema(manifest_of(out), "run_manifest")

    def test_unmet_tolerance_exits_one(self, tmp_path):
        cfg = write_json(tmp_path / "c.json", GAUSS_EXACT)
        out = str(tmp_path / "report.json")
        rc = main(["verify-theorem", "--config", cfg, "--mc", "2000",
                   "--seed", "0", "--tol", "0.000001", "--out", out])
        assert rc == 1
        assert read_json(out)["passed"] is False

    def test_reports_byte_identical_across_runs(self, tmp_path):
        cfg = write_json(tmp_path / "c.json", GAUSS_EXACT)
        a, b = str(tmp_path / "a.json"), str(tmp_path / "b.json")
        for out in (a, b):
            main(["verify-theorem", "--config", cfg, "--mc", "2000",
                  "--seed", "0", "--tol", "0.000001", "--out", out])
        assert Path(a).read_bytes() == Path(b).read_bytes()

    def test_worker_count_does_not_change_bytes(self, tmp_path, monkeypatch):
        cfg = write_json(tmp_path / "c.json", GAUSS_EXACT)
        outputs = []
        for threads, name in (("1", "a.json"), ("3", "b.json")):
            monkeypatch.setenv("SPURIOUS_LENS_THREADS", threads)
            out = str(tmp_path / name)
            main(["verify-theorem", "--config", cfg, "--mc", "20000",
                  "--seed", "0", "--out", out])
            outputs.append(Path(out).read_bytes())
        assert outputs[0] == outputs[1]

    def test_manifest_digest_tracks_inputs(self, tmp_path):
        cfg = write_json(tmp_path / "c.json", GAUSS_EXACT)
        a, b, c = (str(tmp_path / n) for n in ("a.json", "b.json", "c.json"))
        main(["verify-theorem", "--config", cfg, "--mc", "2000",
              "--tol", "0.5", "--out", a])
        main(["verify-theorem", "--config", cfg, "--mc", "2000",
              "--tol", "0.5", "--out", b])
        main(["verify-theorem", "--config", cfg, "--mc", "2000",
              "--tol", "0.5", "--seed", "1", "--out", c])
        assert manifest_of(a)["config_digest"] == manifest_of(b)["config_digest"]
        assert manifest_of(a)["config_digest"] != manifest_of(c)["config_digest"]
        m = manifest_of(a)
        assert m["subcommand"] == "verify-theorem"
        assert m["version"] == __version__
        assert m["outputs"] == [a]

    def test_timestamp_only_in_manifest(self, tmp_path):
        cfg = write_json(tmp_path / "c.json", GAUSS_EXACT)
        out = str(tmp_path / "report.json")
        main(["verify-theorem", "--config", cfg, "--mc", "2000",
              "--tol", "0.5", "--out", out])
        assert "timestamp" not in Path(out).read_text(encoding="utf-8")
        assert "timestamp" in manifest_of(out)

    def test_malformed_config_exits_two(self, tmp_path, capsys):
        cfg = write(tmp_path / "c.json", "{not json")
        rc = main(["verify-theorem", "--config", cfg,
                   "--out", str(tmp_path / "r.json")])
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_missing_config_exits_two(self, tmp_path):
        rc = main(["verify-theorem", "--config", str(tmp_path / "absent.json"),
                   "--out", str(tmp_path / "r.json")])
        assert rc == 2

    def test_unknown_config_field_exits_two(self, tmp_path):
        cfg = write_json(tmp_path / "c.json", {**GAUSS_EXACT, "bogus": 1})
        rc = main(["verify-theorem", "--config", cfg,
                   "--out", str(tmp_path / "r.json")])
        assert rc == 2

    def test_too_few_mc_exits_two(self, tmp_path):
        cfg = write_json(tmp_path / "c.json", GAUSS_EXACT)
        rc = main(["verify-theorem", "--config", cfg, "--mc", "100",
                   "--out", str(tmp_path / "r.json")])
        assert rc == 2


class TestSimulateGaussian:
    def test_report_and_manifest(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "c.json", GAUSS_DEF1)
        out = str(tmp_path / "sim.json")
        rc = main(["simulate-gaussian", "--config", cfg, "--seed", "0",
                   "--out", out])
        assert rc == 0
        assert capsys.readouterr().out == ""
        payload = read_json(out)
        check_schema(payload, "subgroup_report")
        assert payload["n_train"] == GAUSS_DEF1["n"]
        assert payload["n_test"] == GAUSS_DEF1["n"]
        assert 0.0 <= payload["alignment"]["target_gap"]
        check_schema(manifest_of(out), "run_manifest")

    def test_deterministic(self, tmp_path):
        cfg = write_json(tmp_path / "c.json", GAUSS_DEF1)
        a, b = str(tmp_path / "a.json"), str(tmp_path / "b.json")
        for out in (a, b):
            main(["simulate-gaussian", "--config", cfg, "--out", out])
        assert Path(a).read_bytes() == Path(b).read_bytes()


class TestSimulateDiscrete:
    def test_csv_and_sidecar(self, tmp_path):
        cfg = write_json(tmp_path / "c.json", DISCRETE)
        out = str(tmp_path / "table.csv")
        rc = main(["simulate-discrete", "--config", cfg, "--seeds", "2",
                   "--out", out])
        assert rc == 0
        lines = Path(out).read_text(encoding="utf-8").strip().splitlines()
        assert lines[0] == "k,n,p_inv,p_spu,method,rand,rev,rest"
        assert len(lines) == 3
        sup, con = lines[1].split(","), lines[2].split(",")
        assert sup[:5] == ["2", "400", "0.75", "0.9", "supervised"]
        assert con[4] == "contrastive"
        assert "±" in sup[5] and "±" in sup[6]
        assert sup[7] == "n/a"
        sidecar = read_json(Path(out).with_suffix(".json"))
        check_schema(sidecar, "discrete_summary")
        assert sidecar["n_seeds"] == 2
        manifest = manifest_of(out)
        check_schema(manifest, "run_manifest")
        assert set(manifest["outputs"]) == {out, str(Path(out).with_suffix(".json"))}

    def test_single_seed_zero_std(self, tmp_path):
        cfg = write_json(tmp_path / "c.json", DISCRETE)
        out = str(tmp_path / "table.csv")
        main(["simulate-discrete", "--config", cfg, "--seeds", "1", "--out", out])
        row = Path(out).read_text(encoding="utf-8").strip().splitlines()[1]
        assert "± 0.00" in row

    def test_bad_seed_count_exits_two(self, tmp_path):
        cfg = write_json(tmp_path / "c.json", DISCRETE)
        rc = main(["simulate-discrete", "--config", cfg, "--seeds", "0",
                   "--out", str(tmp_path / "t.csv")])
        assert rc == 2


class TestEval:
    def test_report(self, tmp_path, capsys):
        preds = write(tmp_path / "p.csv", PREDICTIONS)
        out = str(tmp_path / "eval.json")
        rc = main(["eval", "--predictions", preds, "--out", out])
        assert rc == 0
        captured = capsys.readouterr()
        assert captured.out == ""
        assert "drop" in captured.err
        payload = read_json(out)
        check_schema(payload, "eval_report")
        assert payload["balanced_easy"] == 0.9
        assert payload["balanced_hard"] == 0.4
        assert payload["balanced_drop"] == pytest.approx(0.5)

    def test_parse_error_names_line(self, tmp_path, capsys):
        preds = write(tmp_path / "p.csv",
                      PREDICTIONS + ",bear,easy,snow,bear\n")
        rc = main(["eval", "--predictions", preds,
                   "--out", str(tmp_path / "e.json")])
        assert rc == 2
        assert "line 22" in capsys.readouterr().err

    def test_unassigned_group_exits_two(self, tmp_path):
        preds = write(tmp_path / "p.csv", DISCOVER_PREDICTIONS)
        rc = main(["eval", "--predictions", preds,
                   "--out", str(tmp_path / "e.json")])
        assert rc == 2


class TestDiscover:
    def test_report(self, tmp_path):
        preds = write(tmp_path / "p.csv", DISCOVER_PREDICTIONS)
        out = str(tmp_path / "disc.json")
        rc = main(["discover", "--predictions", preds, "--threshold", "5",
                   "--min-count", "20", "--out", out])
        assert rc == 0
        payload = read_json(out)
        check_schema(payload, "discovery_report")
        (flagged,) = payload["flagged"]
        assert flagged["easy_background"] == "snow"
        assert flagged["hard_background"] == "grass"
        assert flagged["gap_pp"] == pytest.approx(55.0)

    def test_min_count_can_skip_everything(self, tmp_path):
        preds = write(tmp_path / "p.csv", DISCOVER_PREDICTIONS)
        out = str(tmp_path / "disc.json")
        main(["discover", "--predictions", preds, "--min-count", "30",
              "--out", out])
        payload = read_json(out)
        assert payload["flagged"] == []
        assert payload["skipped"][0]["label"] == "bear"


class TestConfuse:
    def test_report(self, tmp_path):
        sims = write(tmp_path / "s.csv", SIMILARITIES)
        out = str(tmp_path / "conf.json")
        rc = main(["confuse", "--similarities", sims, "--k", "2", "--out", out])
        assert rc == 0
        payload = read_json(out)
        check_schema(payload, "confusing_labels")
        assert payload["labels"] == ["cat", "dog"]
        assert payload["n_samples"] == 3
        assert payload["mean_scores"]["cat"] == pytest.approx(0.8)

    def test_oversized_k_exits_two(self, tmp_path):
        sims = write(tmp_path / "s.csv", SIMILARITIES)
        rc = main(["confuse", "--similarities", sims, "--k", "9",
                   "--out", str(tmp_path / "c.json")])
        assert rc == 2


class TestFit:
    def test_report_and_svg(self, tmp_path):
        points = write(tmp_path / "pts.csv", POINTS)
        out = str(tmp_path / "fit.json")
        rc = main(["fit", "--points", points, "--out", out])
        assert rc == 0
        payload = read_json(out)
        check_schema(payload, "fit_report")
        assert payload["transform"] == "linear"
        assert payload["n_points"] == 3
        svg_path = Path(out).with_suffix(".svg")
        assert payload["svg"] == str(svg_path)
        root = ET.fromstring(svg_path.read_text(encoding="utf-8"))
        assert root.tag.endswith("svg")
        tags = {elem.tag.rsplit("}", 1)[-1] for elem in root.iter()}
        assert "circle" in tags and "line" in tags and "text" in tags
        body = svg_path.read_text(encoding="utf-8")
        assert "href" not in body and "<script" not in body
        manifest = manifest_of(out)
        assert str(svg_path) in manifest["outputs"]

    def test_custom_svg_path(self, tmp_path):
        points = write(tmp_path / "pts.csv", POINTS)
        svg = str(tmp_path / "plot.svg")
        out = str(tmp_path / "fit.json")
        main(["fit", "--points", points, "--svg", svg, "--out", out])
        assert Path(svg).exists()
        assert read_json(out)["svg"] == svg

    def test_probit_transform(self, tmp_path):
        points = write(tmp_path / "pts.csv", POINTS)
        out = str(tmp_path / "fit.json")
        rc = main(["fit", "--points", points, "--transform", "probit",
                   "--out", out])
        assert rc == 0
        assert read_json(out)["transform"] == "probit"

    def test_degenerate_points_exit_three(self, tmp_path, capsys):
        points = write(tmp_path / "pts.csv", "easy,hard\n0.5,0.4\n0.5,0.6\n")
        rc = main(["fit", "--points", points,
                   "--out", str(tmp_path / "f.json")])
        assert rc == 3
        assert "error:" in capsys.readouterr().err

    def test_probit_domain_exit_three(self, tmp_path):
        points = write(tmp_path / "pts.csv", "easy,hard\n1.0,0.4\n0.5,0.6\n")
        rc = main(["fit", "--points", points, "--transform", "probit",
                   "--out", str(tmp_path / "f.json")])
        assert rc == 3


class TestParser:
    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert __version__ in capsys.readouterr().out

    def test_unknown_subcommand(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_subcommand_required(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_console_script_installed(self):
        proc = subprocess.run(
            [sys.executable, "-m", "spurious_lens.cli", "--version"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert __version__ in proc.stdout
