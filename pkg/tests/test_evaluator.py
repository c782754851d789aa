import random

import pytest

from crce.evaluator import (
    AmbiguousVerdictError,
    EvalGroups,
    EvalReport,
    FixtureJudge,
    RuleBasedMockJudge,
    VerdictRecord,
    build_judge_prompt,
    compare_reports,
    compute_report,
    evaluate_model,
    evaluate_prompt_group,
    parse_verdict,
    prompt_hash,
    read_verdict_log,
    recount_rates,
    write_verdict_log,
)


class MetadataGenerator:
    """Test generator emitting metadata images; the concepts present in an
    image are decided by a rule over (prompt, seed)."""

    def __init__(self, rule):
        self.rule = rule

    def generate(self, prompt, seed):
        return {
            "id": f"{prompt_hash(prompt)}/{seed}",
            "concepts": self.rule(prompt, seed),
        }


class TestJudgePrompt:
    def test_contains_concept(self):
        prompt = build_judge_prompt("Dog")
        assert "whether it has the same concept as Dog" in prompt

    def test_binary_instruction_appended(self):
        assert "yes or no" in build_judge_prompt("Dog")

    def test_empty_concept_rejected(self):
        with pytest.raises(ValueError):
            build_judge_prompt("   ")

    def test_angle_brackets_escaped(self):
        prompt = build_judge_prompt("<Dog>")
        assert "<Dog>" not in prompt
        assert "\\<Dog\\>" in prompt


class TestParseVerdict:
    def test_affirmative_sentence(self):
        assert parse_verdict("Yes, the image shows a dog.") == "yes"

    def test_bare_no(self):
        assert parse_verdict("no") == "no"

    def test_case_and_punctuation(self):
        assert parse_verdict("NO!") == "no"
        assert parse_verdict("  YES.") == "yes"

    def test_first_standalone_token_wins(self):
        assert parse_verdict("no, wait, yes") == "no"

    def test_unclear_is_ambiguous(self):
        with pytest.raises(AmbiguousVerdictError):
            parse_verdict("It is unclear.")

    def test_substring_does_not_count(self):
        with pytest.raises(AmbiguousVerdictError):
            parse_verdict("nothing to report; eyes closed")


class TestEvaluatePromptGroup:
    def test_always_no_judge_gives_zero(self):
        generator = MetadataGenerator(lambda p, s: [])
        result = evaluate_prompt_group(
            generator, ["dog"], RuleBasedMockJudge(), 10, list(range(10)), concept="dog"
        )
        assert result.yes_rate == 0.0

    def test_three_of_ten_yes(self):
        yes_seeds = {1, 4, 7}
        generator = MetadataGenerator(lambda p, s: ["dog"] if s in yes_seeds else [])
        result = evaluate_prompt_group(
            generator, ["dog"], RuleBasedMockJudge(), 10, list(range(10)), concept="dog"
        )
        assert result.yes_rate == pytest.approx(0.3)

    def test_deterministic(self):
        generator = MetadataGenerator(lambda p, s: ["dog"] if s % 3 == 0 else [])
        args = (generator, ["dog", "puppy"], RuleBasedMockJudge(), 6, list(range(6)))
        first = evaluate_prompt_group(*args, concept="dog")
        second = evaluate_prompt_group(*args, concept="dog")
        assert first.yes_rate == second.yes_rate

    def test_permutation_invariance(self):
        rule = lambda p, s: ["dog"] if (s + len(p)) % 2 == 0 else []
        generator = MetadataGenerator(rule)
        prompts = ["dog", "puppy", "hound"]
        seeds = list(range(8))
        base = evaluate_prompt_group(generator, prompts, RuleBasedMockJudge(), 8, seeds, concept="dog")
        shuffled_prompts = prompts[::-1]
        perm = evaluate_prompt_group(
            generator, shuffled_prompts, RuleBasedMockJudge(), 8, seeds, concept="dog"
        )
        assert base.yes_rate == perm.yes_rate

    def test_seed_count_must_match(self):
        generator = MetadataGenerator(lambda p, s: [])
        with pytest.raises(ValueError):
            evaluate_prompt_group(generator, ["dog"], RuleBasedMockJudge(), 3, [0, 1], concept="dog")

    def test_per_prompt_concept_when_none(self):
        # retain-style judging: each prompt judged against its own text
        generator = MetadataGenerator(lambda p, s: [p])
        result = evaluate_prompt_group(
            generator, ["cat", "pig"], RuleBasedMockJudge(), 2, [0, 1], concept=None
        )
        assert result.yes_rate == 1.0

    def test_ambiguous_conservative_yes(self):
        class MumblingJudge:
            def __call__(self, image, prompt):
                return "hard to tell"

        generator = MetadataGenerator(lambda p, s: [])
        result = evaluate_prompt_group(
            generator, ["dog"], MumblingJudge(), 4, list(range(4)),
            concept="dog", ambiguous_policy="conservative", conservative_answer="yes",
        )
        assert result.yes_rate == 1.0
        assert result.ambiguous_count == 4

    def test_ambiguous_excluded_when_configured(self):
        class MumblingJudge:
            def __init__(self):
                self.calls = 0

            def __call__(self, image, prompt):
                self.calls += 1
                return "hmm"

        generator = MetadataGenerator(lambda p, s: [])
        judge = MumblingJudge()
        result = evaluate_prompt_group(
            generator, ["dog"], judge, 4, list(range(4)),
            concept="dog", ambiguous_policy="exclude",
        )
        assert result.yes_rate == 0.0
        assert result.excluded_count == 4
        assert judge.calls == 8  # one retry per image

    def test_ambiguous_retry_can_recover(self):
        class FlakyJudge:
            def __init__(self):
                self.calls = 0

            def __call__(self, image, prompt):
                self.calls += 1
                return "unsure" if self.calls % 2 == 1 else "yes"

        generator = MetadataGenerator(lambda p, s: [])
        result = evaluate_prompt_group(
            generator, ["dog"], FlakyJudge(), 2, [0, 1], concept="dog"
        )
        assert result.yes_rate == 1.0
        assert result.ambiguous_count == 0

    def test_parallel_workers_match_serial(self):
        rule = lambda p, s: ["dog"] if (s * 7 + len(p)) % 3 == 0 else []
        generator = MetadataGenerator(rule)
        prompts = ["dog", "puppy", "mutt"]
        serial = evaluate_prompt_group(
            generator, prompts, RuleBasedMockJudge(), 6, list(range(6)), concept="dog", workers=1
        )
        parallel = evaluate_prompt_group(
            generator, prompts, RuleBasedMockJudge(), 6, list(range(6)), concept="dog", workers=4
        )
        assert serial.yes_rate == parallel.yes_rate


class TestComputeReport:
    def test_all_zero_groups(self):
        rates = {g: 0.0 for g in ("target", "coref_train", "coref_test", "retain_train", "retain_test")}
        report = compute_report("dog", rates)
        assert report.metrics() == {
            "acc_u": 0.0, "acc_c_train": 0.0, "acc_c_test": 0.0,
            "acc_r_train": 0.0, "acc_r_test": 0.0,
        }

    def test_published_object_row_round_trips(self):
        rates = {
            "target": 0.0125,
            "coref_train": 0.1281,
            "coref_test": 0.2631,
            "retain_train": 0.8520,
            "retain_test": 0.7956,
        }
        report = compute_report("object-average", rates)
        rendered = compare_reports([report])[0]
        for expected in ("1.25", "12.81", "26.31", "85.20", "79.56"):
            assert expected in rendered

    def test_missing_group_rejected(self):
        with pytest.raises(ValueError) as exc_info:
            compute_report("dog", {"target": 0.0})
        assert "coref_train" in str(exc_info.value)

    def test_mixed_rates_mean(self):
        # group accuracy is the flat mean over (prompt, image) pairs:
        # two prompts at per-prompt rates 0.2 and 0.4 average to 0.3
        yes_by_prompt = {"cat": {0}, "pig": {0, 1}}
        generator = MetadataGenerator(lambda p, s: [p] if s in yes_by_prompt[p] else [])
        result = evaluate_prompt_group(
            generator, ["cat", "pig"], RuleBasedMockJudge(), 5, list(range(5)), concept=None
        )
        assert result.yes_rate == pytest.approx(0.3)


class TestRecountOracle:
    def test_recount_matches_reported_rates_on_synthetic_logs(self):
        rng = random.Random(0)
        groups = {
            "target": ["dog"],
            "coref_train": ["puppy", "pooch"],
            "coref_test": ["hound"],
            "retain_train": ["cat", "pig"],
            "retain_test": ["wolf"],
        }
        yes_sets = {}
        for name, prompts in groups.items():
            for prompt in prompts:
                yes_sets[prompt] = {s for s in range(25) if rng.random() < rng.random()}

        def rule(prompt, seed):
            present = []
            if seed in yes_sets[prompt]:
                present.append("dog" if not prompt.startswith(("cat", "pig", "wolf")) else prompt)
            return present

        generator = MetadataGenerator(rule)
        eval_groups = EvalGroups(
            target="dog",
            coref_train=groups["coref_train"],
            coref_test=groups["coref_test"],
            retain_train=groups["retain_train"],
            retain_test=groups["retain_test"],
        )
        report, records = evaluate_model(
            generator, eval_groups, RuleBasedMockJudge(), n_images=25, seeds=list(range(25))
        )
        assert len(records) == 25 * sum(len(p) for p in groups.values())
        recounted = recount_rates(records)
        assert report.acc_u == recounted["target"]
        assert report.acc_c_train == recounted["coref_train"]
        assert report.acc_c_test == recounted["coref_test"]
        assert report.acc_r_train == recounted["retain_train"]
        assert report.acc_r_test == recounted["retain_test"]

    def test_verdict_log_round_trip(self, tmp_path):
        records = [
            VerdictRecord("target", "dog", "abc/0", 0, "Yes.", "yes"),
            VerdictRecord("retain_train", "cat", "def/1", 1, "No.", "no"),
        ]
        path = tmp_path / "verdicts.jsonl"
        write_verdict_log(records, str(path))
        loaded = read_verdict_log(str(path))
        assert [r.to_dict() for r in loaded] == [r.to_dict() for r in records]


class TestCompareReports:
    def make_report(self, **metrics):
        base = dict(acc_u=0.5, acc_c_train=0.5, acc_c_test=0.5, acc_r_train=0.5, acc_r_test=0.5)
        base.update(metrics)
        return EvalReport(target="dog", n_images_per_prompt=10, seeds=list(range(10)), **base)

    def test_single_report_single_row(self):
        markdown, csv_text = compare_reports([self.make_report()], names=["crce"])
        assert markdown.count("\n") == 3  # header, separator, one row
        assert csv_text.splitlines()[1].startswith("crce,")

    def test_lower_acc_u_highlighted(self):
        a = self.make_report(acc_u=0.9)
        b = self.make_report(acc_u=0.1)
        markdown, _ = compare_reports([a, b], names=["worse", "better"])
        better_row = [line for line in markdown.splitlines() if line.startswith("| better")][0]
        worse_row = [line for line in markdown.splitlines() if line.startswith("| worse")][0]
        assert "**10.00**" in better_row
        assert "**" not in worse_row.split("|")[2]

    def test_higher_retention_highlighted(self):
        a = self.make_report(acc_r_test=0.9)
        b = self.make_report(acc_r_test=0.2)
        markdown, _ = compare_reports([a, b], names=["keeper", "loser"])
        keeper_row = [line for line in markdown.splitlines() if line.startswith("| keeper")][0]
        assert "**90.00**" in keeper_row

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            compare_reports([])


class TestFixtureJudge:
    def test_replays_by_image_id(self):
        judge = FixtureJudge({"abc/0": "Yes.", "abc/1": "No."})
        assert judge({"id": "abc/0"}, "whatever") == "Yes."
        assert judge({"id": "abc/1"}, "whatever") == "No."
        with pytest.raises(KeyError):
            judge({"id": "missing"}, "whatever")
