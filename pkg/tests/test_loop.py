import json
import math

import pytest

from iacloop.gateway import (
    ScriptedBackend,
    SyntheticBackend,
    SyntheticParams,
)
from iacloop.linter import lint_template
from iacloop.located_json import parse_located
from iacloop.loop import (
    FEEDBACK_HEADER,
    SYSTEM_PROMPT,
    BackendFailure,
    BenchmarkCase,
    LoopConfig,
    LoopTrace,
    build_feedback_messages,
    build_initial_messages,
    run_loop,
)
from iacloop.schema_store import builtin_core_schemas

VPC_PROMPT = (
    "Create a AWS CloudFormation template that deploys a VPC with a pair of "
    "private subnets spread across two Availabilty Zones. It deploys a VPC "
    "Endpoint for CloudFormation so an instance in the private subnet can use "
    "cfn-signal for its CreationPolicy."
)

THREE_ERRORS = json.dumps(
    {
        "Resources": {
            "I": {
                "Type": "AWS::EC2::Instance",
                "Properties": {"InstanceType": 5, "Monitoring": "x"},
            }
        }
    }
)
ONE_ERROR = json.dumps(
    {"Resources": {"I": {"Type": "AWS::EC2::Instance", "Properties": {"InstanceType": "t2.micro"}}}}
)
CLEAN = json.dumps(
    {
        "AWSTemplateFormatVersion": "2010-09-09",
        "Resources": {
            "MyEC2Instance": {
                "Type": "AWS::EC2::Instance",
                "Properties": {"InstanceType": "t2.micro", "ImageId": "ami-0abcdef1234567890"},
            }
        },
    }
)

STORE = builtin_core_schemas()


class RecordingBackend:
    """Wraps another backend and keeps every conversation it was sent."""

    def __init__(self, inner):
        self.inner = inner
        self.conversations = []

    def complete(self, conversation, cfg):
        self.conversations.append(list(conversation))
        return self.inner.complete(conversation, cfg)


class TestBuildInitialMessages:
    def test_prompt_passed_verbatim(self):
        case = BenchmarkCase(id="vpc", prompt=VPC_PROMPT)
        messages = build_initial_messages(case)
        assert messages[1].content == VPC_PROMPT

    def test_two_messages_system_then_user(self):
        messages = build_initial_messages(BenchmarkCase(id="x", prompt="anything"))
        assert [m.role for m in messages] == ["system", "user"]
        assert messages[0].content == SYSTEM_PROMPT

    def test_empty_prompt_rejected_upstream(self):
        with pytest.raises(ValueError):
            BenchmarkCase(id="x", prompt="")


class TestBuildFeedbackMessages:
    def _report(self, text):
        return lint_template(parse_located(text), STORE)

    def test_contains_formatted_diagnostics_verbatim(self):
        text = json.dumps(
            {
                "Resources": {
                    "I": {
                        "Type": "AWS::EC2::Instance",
                        "Properties": {"ImageId": "a", "AvailabilityZone": {"Fn::GetAZs": ""}},
                    }
                }
            }
        )
        report = self._report(text)
        messages = build_feedback_messages(text, report, "path/to/my_iac.json")
        diag = report.diagnostics[0]
        expected = (
            "E1015 {'Fn::GetAZs': ''} is not of type 'string'\n"
            f"Error location - path/to/my_iac.json:{diag.span.line}:{diag.span.column}"
        )
        assert expected in messages[1].content

    def test_three_diagnostics_render_three_blocks(self):
        report = self._report(THREE_ERRORS)
        assert len(report.diagnostics) == 3
        messages = build_feedback_messages(THREE_ERRORS, report, "template.json")
        body = messages[1].content
        block = body.split("Running cfn-lint produced:\n", 1)[1]
        block = block.split("\nModify the template", 1)[0]
        entries = block.split("\n\n")
        assert len(entries) == 3
        assert all(len(e.split("\n")) == 2 for e in entries)

    def test_empty_report_rejected(self):
        report = self._report(CLEAN)
        with pytest.raises(ValueError):
            build_feedback_messages(CLEAN, report, "template.json")

    def test_message_shape_and_statelessness(self):
        report = self._report(ONE_ERROR)
        messages = build_feedback_messages(ONE_ERROR, report, "template.json")
        assert [m.role for m in messages] == ["system", "user"]
        assert messages[0].content == SYSTEM_PROMPT
        assert messages[1].content.startswith(FEEDBACK_HEADER)

    def test_warning_filter(self):
        text = json.dumps(
            {
                "Parameters": {"Ghost": {"Type": "String"}},
                "Resources": {"I": {"Type": "AWS::EC2::Instance", "Properties": {}}},
            }
        )
        report = self._report(text)
        assert (report.error_count, report.warning_count) == (1, 1)
        with_warnings = build_feedback_messages(text, report, "t.json", include_warnings=True)
        without = build_feedback_messages(text, report, "t.json", include_warnings=False)
        assert "W2001" in with_warnings[1].content
        assert "W2001" not in without[1].content
        assert "E3003" in without[1].content


class TestRunLoop:
    def test_early_stop_trace(self):
        backend = ScriptedBackend([THREE_ERRORS, ONE_ERROR, CLEAN])
        case = BenchmarkCase(id="c", prompt="p")
        trace = run_loop(case, backend, STORE, LoopConfig(max_iterations=10, early_stop=True))
        assert len(trace.records) == 3
        assert trace.counts() == [(3, 0), (1, 0), (0, 0)]
        assert [r.index for r in trace.records] == [0, 1, 2]

    def test_unconditional_rounds_padded_clean(self):
        script = [THREE_ERRORS, ONE_ERROR, CLEAN] + [CLEAN] * 8
        backend = ScriptedBackend(script)
        case = BenchmarkCase(id="c", prompt="p")
        trace = run_loop(case, backend, STORE, LoopConfig(max_iterations=10, early_stop=False))
        assert len(trace.records) == 11
        assert trace.counts() == [(3, 0), (1, 0)] + [(0, 0)] * 9

    def test_clean_turns_still_query_backend(self):
        backend = RecordingBackend(ScriptedBackend([CLEAN, CLEAN, CLEAN]))
        case = BenchmarkCase(id="c", prompt="p")
        trace = run_loop(case, backend, STORE, LoopConfig(max_iterations=2, early_stop=False))
        assert len(trace.records) == 3
        assert len(backend.conversations) == 3
        # follow-up turns refeed the template even though the report is clean
        assert backend.conversations[1][1].content.startswith(FEEDBACK_HEADER)

    def test_extraction_failure_carries_counts_forward(self):
        backend = ScriptedBackend([THREE_ERRORS, "I cannot help with that.", ONE_ERROR])
        case = BenchmarkCase(id="c", prompt="p")
        trace = run_loop(case, backend, STORE, LoopConfig(max_iterations=2))
        assert [r.extraction_failed for r in trace.records] == [False, True, False]
        assert trace.counts() == [(3, 0), (3, 0), (1, 0)]
        assert trace.records[1].template_text == "I cannot help with that."
        assert trace.records[1].diagnostics_rendered == trace.records[0].diagnostics_rendered

    def test_failed_extraction_refeeds_last_good_template(self):
        backend = RecordingBackend(
            ScriptedBackend([THREE_ERRORS, "nope", ONE_ERROR])
        )
        case = BenchmarkCase(id="c", prompt="p")
        run_loop(case, backend, STORE, LoopConfig(max_iterations=2))
        # turn after the failed extraction still refeeds the three-error template
        assert THREE_ERRORS in backend.conversations[2][1].content

    def test_initial_extraction_failure_restarts_prompt(self):
        backend = RecordingBackend(ScriptedBackend(["no template here", ONE_ERROR]))
        case = BenchmarkCase(id="c", prompt="the prompt")
        trace = run_loop(case, backend, STORE, LoopConfig(max_iterations=1))
        assert trace.counts() == [(0, 0), (1, 0)]
        assert trace.records[0].extraction_failed
        assert backend.conversations[1][1].content == "the prompt"

    def test_backend_failure_preserves_partial_trace(self):
        backend = ScriptedBackend([THREE_ERRORS, ONE_ERROR])
        case = BenchmarkCase(id="c", prompt="p")
        with pytest.raises(BackendFailure) as exc_info:
            run_loop(case, backend, STORE, LoopConfig(max_iterations=5))
        assert exc_info.value.trace.counts() == [(3, 0), (1, 0)]

    def test_counts_match_independent_relint(self):
        params = SyntheticParams(p_fix=0.5, p_spawn=0.3, stubborn_fraction=0.25, seed=77)
        backend = SyntheticBackend(params, initial_defects=10)
        case = BenchmarkCase(id="c", prompt="p")
        trace = run_loop(case, backend, STORE, LoopConfig(max_iterations=6))
        for record in trace.records:
            if record.extraction_failed:
                continue
            report = lint_template(parse_located(record.template_text), STORE)
            assert (record.error_count, record.warning_count) == (
                report.error_count,
                report.warning_count,
            )

    def test_trace_roundtrips_through_json(self):
        backend = ScriptedBackend([THREE_ERRORS, ONE_ERROR, CLEAN])
        case = BenchmarkCase(id="c", prompt="p")
        trace = run_loop(case, backend, STORE, LoopConfig(max_iterations=2))
        restored = LoopTrace.from_dict(json.loads(json.dumps(trace.to_dict())))
        assert restored == trace

    def test_records_capped_by_max_iterations(self):
        backend = ScriptedBackend([THREE_ERRORS] * 4)
        case = BenchmarkCase(id="c", prompt="p")
        trace = run_loop(case, backend, STORE, LoopConfig(max_iterations=3))
        assert len(trace.records) == 4


class TestSyntheticDecayThroughLoop:
    def test_mean_errors_follow_halving_curve(self):
        seeds, n0, iterations = 200, 16, 4
        case = BenchmarkCase(id="d", prompt="p")
        sums = [0.0] * (iterations + 1)
        squares = [0.0] * (iterations + 1)
        for seed in range(seeds):
            params = SyntheticParams(p_fix=0.5, p_spawn=0.0, stubborn_fraction=0.0, seed=seed)
            backend = SyntheticBackend(params, initial_defects=n0)
            trace = run_loop(case, backend, STORE, LoopConfig(max_iterations=iterations))
            for record in trace.records:
                sums[record.index] += record.error_count
                squares[record.index] += record.error_count**2
        for t in range(iterations + 1):
            mean = sums[t] / seeds
            variance = max(squares[t] / seeds - mean**2, 0.0)
            limit = 3 * math.sqrt(variance / seeds)
            expected = n0 * 0.5**t
            assert abs(mean - expected) <= max(limit, 1e-9), (t, mean, expected)
