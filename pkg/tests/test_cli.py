import json
import xml.etree.ElementTree as ET
from pathlib import Path


from iacloop.cli import dispatch

FIXTURES = Path(__file__).parent / "fixtures" / "lint"

THREE_ERRORS = json.dumps(
    {"Resources": {"I": {"Type": "AWS::EC2::Instance",
                         "Properties": {"InstanceType": 5, "Monitoring": "x"}}}}
)
ONE_ERROR = json.dumps(
    {"Resources": {"I": {"Type": "AWS::EC2::Instance",
                         "Properties": {"InstanceType": "t2.micro"}}}}
)
CLEAN = json.dumps(
    {"AWSTemplateFormatVersion": "2010-09-09",
     "Resources": {"M": {"Type": "AWS::EC2::Instance",
                         "Properties": {"InstanceType": "t2.micro", "ImageId": "ami-1"}}}}
)


class TestLintCommand:
    def test_clean_template_exit_0_empty_stdout(self, capsys):
        code = dispatch(["lint", str(FIXTURES / "clean.json")])
        captured = capsys.readouterr()
        assert code == 0
        assert captured.out == ""

    def test_errors_exit_2_with_two_line_blocks(self, capsys):
        path = FIXTURES / "getazs_in_string.json"
        code = dispatch(["lint", str(path)])
        captured = capsys.readouterr()
        assert code == 2
        assert captured.out.startswith("E1015 {'Fn::GetAZs': ''} is not of type 'string'\n")
        assert f"Error location - {path}:" in captured.out

    def test_warnings_only_exit_0(self, capsys):
        code = dispatch(["lint", str(FIXTURES / "unused_parameter.json")])
        captured = capsys.readouterr()
        assert code == 0
        assert "W2001 Parameter 'Env' is never used" in captured.out

    def test_blank_line_between_diagnostics(self, capsys):
        dispatch(["lint", str(FIXTURES / "multi_defect_three.json")])
        captured = capsys.readouterr()
        blocks = captured.out.strip().split("\n\n")
        assert len(blocks) == 3

    def test_json_format(self, capsys):
        code = dispatch(["lint", str(FIXTURES / "getazs_in_string.json"), "--format", "json"])
        captured = capsys.readouterr()
        assert code == 2
        payload = json.loads(captured.out)
        assert payload[0]["code"] == "E1015"
        assert payload[0]["pointer"] == "/Resources/Instance/Properties/AvailabilityZone"

    def test_strict_types_flag(self, capsys):
        path = FIXTURES / "unknown_type_lenient.json"
        assert dispatch(["lint", str(path)]) == 0
        assert dispatch(["lint", str(path), "--strict-types"]) == 2
        captured = capsys.readouterr()
        assert "E3002" in captured.out

    def test_schemas_dir_flag(self, tmp_path, capsys):
        schema = {
            "typeName": "AWS::Custom::Widget",
            "properties": {"Size": {"type": "integer"}},
            "required": ["Size"],
        }
        (tmp_path / "widget.json").write_text(json.dumps(schema))
        template = tmp_path / "t.json"
        template.write_text(json.dumps(
            {"Resources": {"W": {"Type": "AWS::Custom::Widget", "Properties": {}}}}
        ))
        code = dispatch(["lint", str(template), "--schemas", str(tmp_path)])
        captured = capsys.readouterr()
        assert code == 2
        assert "E3003 Required property 'Size' is missing" in captured.out

    def test_syntax_error_reported_as_e0000(self, tmp_path, capsys):
        bad = tmp_path / "broken.json"
        bad.write_text('{"a": }')
        code = dispatch(["lint", str(bad)])
        captured = capsys.readouterr()
        assert code == 2
        assert captured.out.startswith("E0000 ")
        assert f"Error location - {bad}:1:7" in captured.out

    def test_missing_file_runtime_failure(self, capsys):
        assert dispatch(["lint", "/no/such/file.json"]) == 3


class TestDispatchBasics:
    def test_unknown_subcommand_usage_error(self, capsys):
        code = dispatch(["frobnicate"])
        captured = capsys.readouterr()
        assert code == 1
        assert "usage" in captured.err.lower()

    def test_no_subcommand_usage_error(self, capsys):
        assert dispatch([]) == 1

    def test_help_exits_zero(self, capsys):
        assert dispatch(["--help"]) == 0

    def test_help_lists_interface_flags(self, capsys):
        expectations = {
            "lint": ["--schemas", "--strict-types", "--format"],
            "loop": ["--prompt-file", "--backend", "--iterations", "--early-stop", "--out"],
            "bench": ["--cases", "--backend", "--trials", "--generations", "--iterations",
                      "--seed", "--out", "--parallel"],
            "report": ["--in", "--csv", "--svg"],
        }
        for command, flags in expectations.items():
            dispatch([command, "--help"])
            text = capsys.readouterr().out
            for flag in flags:
                assert flag in text, (command, flag)
        dispatch(["--help"])
        assert "--config" in capsys.readouterr().out

    def test_malformed_config_positioned_error(self, tmp_path, capsys):
        config = tmp_path / "cfg.json"
        config.write_text('{\n  "schemas_dir": \n}')
        code = dispatch(["--config", str(config), "lint", str(FIXTURES / "clean.json")])
        captured = capsys.readouterr()
        assert code == 1
        assert "cfg.json:3:1" in captured.err

    def test_config_supplies_schemas_dir(self, tmp_path, capsys):
        schema = {
            "typeName": "AWS::Custom::Widget",
            "properties": {"Size": {"type": "integer"}},
            "required": ["Size"],
        }
        schemas = tmp_path / "schemas"
        schemas.mkdir()
        (schemas / "widget.json").write_text(json.dumps(schema))
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"schemas_dir": str(schemas)}))
        template = tmp_path / "t.json"
        template.write_text(json.dumps(
            {"Resources": {"W": {"Type": "AWS::Custom::Widget", "Properties": {}}}}
        ))
        assert dispatch(["--config", str(config), "lint", str(template)]) == 2


class TestLoopCommand:
    def test_scripted_loop_writes_trace(self, tmp_path, capsys):
        script = tmp_path / "script"
        script.mkdir()
        for i, text in enumerate([THREE_ERRORS, ONE_ERROR, CLEAN]):
            (script / f"{i:03d}.txt").write_text(text)
        prompt = tmp_path / "p.txt"
        prompt.write_text("Create a bucket stack")
        out = tmp_path / "trace.json"
        code = dispatch([
            "loop", "--prompt-file", str(prompt), "--backend", "scripted",
            "--script-dir", str(script), "--iterations", "5", "--early-stop",
            "--out", str(out),
        ])
        assert code == 0
        trace = json.loads(out.read_text())
        assert trace["case_id"] == "p"
        assert [r["error_count"] for r in trace["records"]] == [3, 1, 0]

    def test_synthetic_loop_deterministic(self, tmp_path, capsys):
        prompt = tmp_path / "p.txt"
        prompt.write_text("Create a vpc")
        outputs = []
        for name in ("a.json", "b.json"):
            out = tmp_path / name
            code = dispatch([
                "loop", "--prompt-file", str(prompt), "--backend", "synthetic",
                "--iterations", "4", "--seed", "11", "--initial-defects", "6",
                "--out", str(out),
            ])
            assert code == 0
            outputs.append(out.read_text())
        assert outputs[0] == outputs[1]

    def test_missing_script_dir_usage_error(self, tmp_path, capsys):
        prompt = tmp_path / "p.txt"
        prompt.write_text("x")
        code = dispatch([
            "loop", "--prompt-file", str(prompt), "--backend", "scripted",
            "--out", str(tmp_path / "t.json"),
        ])
        assert code == 1


class TestBenchAndReport:
    def test_end_to_end(self, tmp_path, capsys):
        cases = tmp_path / "cases"
        cases.mkdir()
        for i in range(2):
            (cases / f"case{i}.txt").write_text(f"Create stack {i}")
        results = tmp_path / "results.json"
        code = dispatch([
            "bench", "--cases", str(cases), "--backend", "synthetic",
            "--trials", "2", "--generations", "1", "--iterations", "3",
            "--seed", "7", "--out", str(results), "--parallel", "2",
        ])
        assert code == 0
        payload = json.loads(results.read_text())
        assert len(payload["trials"]) == 2
        assert payload["stats"] is not None

        csv_out = tmp_path / "out.csv"
        svg_out = tmp_path / "out.svg"
        code = dispatch([
            "report", "--in", str(results), "--csv", str(csv_out), "--svg", str(svg_out),
        ])
        assert code == 0
        assert csv_out.read_text().startswith("iteration,mean_errors")
        root = ET.fromstring(svg_out.read_text())
        bars = [e for e in root.iter() if e.get("class") == "bar"]
        assert len(bars) == 4

    def test_report_requires_an_output(self, tmp_path, capsys):
        results = tmp_path / "results.json"
        results.write_text(json.dumps({"stats": {"mean_errors": [1], "std_errors": [0],
                                                 "mean_warnings": [0], "std_warnings": [0]}}))
        assert dispatch(["report", "--in", str(results)]) == 1
