"""Smoke test for the promptrl extension module.

Build and install first, e.g. `maturin develop -m crates/python/Cargo.toml`,
then run `python crates/python/python/smoke_test.py`.
"""

import pathlib
import shutil
import tempfile

import promptrl

DATA = pathlib.Path(__file__).resolve().parents[2] / "core" / "tests" / "data"

RULES = """
[[rules]]
prompt_contains = "Return only"
min_shots = 2
behavior = "echo_gold"

[default]
behavior = "fixed_text"
text = "I think it is positive."
"""


def check_rewards():
    good = "<think>add two examples</think><answer>Classify the review.</answer>"
    assert promptrl.count_tokens(good) == {"<think>": 1, "</think>": 1, "<answer>": 1, "</answer>": 1}
    assert promptrl.structure_reward(good) == 0.75
    assert promptrl.total_reward(good, 1.0, 1.0) == 3.5
    assert promptrl.total_reward("no tags here", 1.0, 1.0) == 0.0
    out = promptrl.extract_answer(good)
    assert out.parse_ok and out.answer == "Classify the review."


def check_metrics():
    assert promptrl.rouge_avg("the cat sat", "the cat sat") == 1.0
    assert promptrl.sari("a b c d", "a b c d", ["a b c d"]) == 100.0
    assert promptrl.match_label("Positive", ["positive", "negative"]) == "positive"
    assert promptrl.match_option_letter("c)") == "C"
    assert promptrl.extract_final_number("so the total is 18", strict=True) is None
    adv = promptrl.group_advantages([1.0, 2.0, 3.0, 4.0])
    assert abs(adv[0] + 1.3416) < 1e-4
    assert promptrl.clipped_term(1.5, 1.0) == 1.2
    assert promptrl.kl_estimate(-1.0, -1.0) == 0.0
    cfg = promptrl.RunConfig(seed=3)
    assert (cfg.group_size, cfg.seed, cfg.beta) == (4, 3, 0.04)


def check_commands():
    prompt = "Classify.\nExamples:\n\"great\" -> positive\n\"dull\" -> negative\nReturn only positive or negative."
    assert promptrl.mock_evaluate(RULES, prompt, "fine film", "positive") == "positive"
    with tempfile.TemporaryDirectory() as tmp:
        work = pathlib.Path(tmp)
        for f in DATA.glob("sst2_*.jsonl"):
            shutil.copy(f, work)
        cfg = (DATA / "synthetic.toml").read_text().replace("iterations = 2000", "iterations = 200")
        (work / "run.toml").write_text(cfg)
        promptrl.validate_config(str(work / "run.toml"))
        best, score = promptrl.train(str(work / "run.toml"))
        assert score == 1.0, score
        rescored = promptrl.score(str(work / "runs" / "best_prompt.txt"), str(work / "sst2_valid.jsonl"), str(work / "run.toml"))
        assert rescored == 1.0
        picked, _ = promptrl.select(str(work / "run.toml"), str(work / "runs" / "checkpoint.txt"))
        assert picked
        try:
            promptrl.validate_config(str(work / "missing.toml"))
        except promptrl.PromptRlError as e:
            assert "missing.toml" in str(e)
        else:
            raise AssertionError("expected an error")


if __name__ == "__main__":
    check_rewards()
    check_metrics()
    check_commands()
    print("smoke test passed")
