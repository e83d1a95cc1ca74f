import json

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from eralign.chem.energy import Harmonic, spec_to_dict
from eralign.chem.properties import ring_count
from eralign.chem.smiles import is_valid, parse_smiles, tokenize_smiles
from eralign.core import AlignmentParams
from eralign.errors import ConfigError, InvalidArgument, TrainingFailure
from eralign.model.policy import SequencePolicy
from eralign.model.training import Adam, AdamConfig, cross_entropy
from eralign.model.transformer import ModelConfig
from eralign.pipeline import run as run_module
from eralign.pipeline.cli import main
from eralign.pipeline.config import RunConfig, config_from_dict, load_config, override, save_config
from eralign.pipeline.corpus import FAMILIES, generate_corpus
from eralign.pipeline.dataset import (
    PromptSet,
    gen_preference_dataset,
    perturb_tokens,
    prompted_pairs,
    read_records,
    write_records,
)
from eralign.pipeline.metrics import (
    N_BINS,
    Histogram,
    MetricsReport,
    emit_metrics,
    identical_fraction,
    prompt_deltas,
    summarize_samples,
)
from eralign.pipeline.run import pretrain_policy, run_align

MODEL = ModelConfig(layers=1, heads=2, width=16, max_len=64)
RINGS = Harmonic("ring_count", 2.0)


@pytest.fixture(scope="module")
def corpus():
    return generate_corpus("mixed", 60, 0)


@pytest.fixture(scope="module")
def policy(corpus):
    pol, _ = pretrain_policy(corpus, MODEL, AdamConfig(lr=3e-3, epochs=3, batch_size=16), seed=0)
    return pol


@pytest.fixture(scope="module")
def records(policy):
    return gen_preference_dataset(policy, PromptSet.unprompted(8), RINGS, 4, seed=1)


# -- corpus ---------------------------------------------------------------------------------------


def test_alkane_enumeration_order():
    assert generate_corpus("alkanes", 3, 0) == ["C", "CC", "CCC"]
    assert generate_corpus("alkanes", 6, 0)[4] == "CC(C)C"


@pytest.mark.parametrize("family", FAMILIES)
def test_corpus_is_valid(family):
    size = 60 if family in ("alkanes", "alcohols") else 200
    corpus = generate_corpus(family, size, 1)
    assert len(corpus) == size
    assert all(is_valid(s) for s in corpus)


def test_ring_family_has_rings():
    assert min(ring_count(parse_smiles(s)) for s in generate_corpus("rings", 200, 2)) >= 1


def test_corpus_seeded():
    assert generate_corpus("mixed", 50, 3) == generate_corpus("mixed", 50, 3)
    assert generate_corpus("mixed", 50, 3) != generate_corpus("mixed", 50, 4)


def test_unknown_family_and_exhausted_enumeration():
    with pytest.raises(ConfigError):
        generate_corpus("steroids", 5, 0)
    with pytest.raises(ConfigError):
        generate_corpus("alkanes", 10_000, 0)


# -- preference datasets ----------------------------------------------------------------------------


@pytest.mark.parametrize("k, per_prompt", [(4, 6), (2, 1), (5, 10)])
def test_pair_count(policy, k, per_prompt):
    recs = gen_preference_dataset(policy, PromptSet.unprompted(3), RINGS, k, seed=0)
    assert len(recs) == 3 * per_prompt


def test_dataset_rejects_small_k_and_foreign_prompts(policy):
    with pytest.raises(InvalidArgument):
        gen_preference_dataset(policy, PromptSet.unprompted(1), RINGS, 1, seed=0)
    with pytest.raises(ConfigError):
        gen_preference_dataset(policy, PromptSet.from_smiles(["[Xe]"]), RINGS, 2, seed=0)


def test_dataset_records_are_consistent(policy, records):
    for r in records[:6]:
        assert r.ref_logp_a == pytest.approx(policy.logprob(r.prompt, r.completion_a), abs=1e-9)
        if is_valid("".join(r.completion_a)):
            n = ring_count(parse_smiles("".join(r.completion_a)))
            assert r.energy_a == (n - 2.0) ** 2 / 2
        else:
            assert r.energy_a == 70.0


def test_dataset_file_is_deterministic(policy, tmp_path):
    for name in ("a", "b"):
        recs = gen_preference_dataset(policy, PromptSet.unprompted(4), RINGS, 4, seed=9)
        write_records(tmp_path / name, recs)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    assert read_records(tmp_path / "a") == recs


def test_bad_record_file(tmp_path):
    (tmp_path / "d.jsonl").write_text('{"prompt": []}\n')
    with pytest.raises(ConfigError):
        read_records(tmp_path / "d.jsonl")


def test_prompt_set():
    with pytest.raises(InvalidArgument):
        PromptSet(())
    assert PromptSet.from_smiles(["CCO", ""]).prompts == (("C", "C", "O"), ())


# -- prompted pairs -----------------------------------------------------------------------------------


def test_prompted_pairs_are_valid_single_token_edits(corpus):
    pairs = prompted_pairs(corpus[:30], np.random.default_rng(0))
    assert len(pairs) >= 25
    for x, y in pairs:
        assert len(x) == len(y)
        assert sum(a != b for a, b in zip(x, y)) == 1
        assert is_valid("".join(y))


def test_perturbation_gives_up():
    # every substitution of the only alphabet symbol is a no-op
    assert perturb_tokens(("C",), ["C"], np.random.default_rng(0)) is None


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_perturbation_always_valid_or_none(seed):
    rng = np.random.default_rng(seed)
    toks = tokenize_smiles("c1ccccc1CCO")
    y = perturb_tokens(toks, ["C", "O", "N", "c", "1", "(", ")"], rng)
    assert y is None or (is_valid("".join(y)) and list(y) != toks)


# -- alignment runs -----------------------------------------------------------------------------------


def test_zero_epoch_run_returns_reference(policy, records, tmp_path):
    out = tmp_path / "aligned.npz"
    aligned, _ = run_align(policy, records, AlignmentParams(1.0), AdamConfig(epochs=0), seed=0, checkpoint_path=out)
    policy.save(tmp_path / "ref.npz")
    assert out.read_bytes() == (tmp_path / "ref.npz").read_bytes()
    assert all(np.array_equal(aligned.params[k], policy.params[k]) for k in policy.params)


def test_epoch_loss_does_not_increase(policy, records):
    _, log = run_align(policy, records, AlignmentParams(1.0), AdamConfig(lr=1e-3, epochs=2, batch_size=8), seed=0)
    assert len(log.step_losses) == 2 * int(np.ceil(len(records) / 8))
    assert log.final_loss <= log.epoch_start_loss[0] * 1.01


def test_dpo_mode(policy, records):
    aligned, log = run_align(policy, records, AlignmentParams(1.0), AdamConfig(lr=1e-3, epochs=1, batch_size=16), 0, mode="dpo")
    assert log.mode == "dpo" and len(log.step_losses) == 3
    assert any(not np.array_equal(aligned.params[k], policy.params[k]) for k in policy.params)
    with pytest.raises(ConfigError):
        run_align(policy, records, AlignmentParams(1.0), AdamConfig(epochs=1), 0, mode="ppo")


def test_training_failure_keeps_last_good_checkpoint(policy, records, tmp_path, monkeypatch):
    real = run_module.era_align_step
    calls = []

    def flaky(pol, batch, align, adam):
        calls.append(1)
        if len(calls) == 3:
            raise TrainingFailure("ERA loss became non-finite")
        return real(pol, batch, align, adam)

    monkeypatch.setattr(run_module, "era_align_step", flaky)
    out = tmp_path / "last.npz"
    with pytest.raises(TrainingFailure):
        run_align(policy, records, AlignmentParams(1.0), AdamConfig(lr=1e-3, epochs=1, batch_size=8), 0, checkpoint_path=out)
    # replay the two good steps by hand
    expected = policy.copy()
    adam = Adam(expected.params, AdamConfig(lr=1e-3, epochs=1, batch_size=8))
    order = np.random.default_rng(0).permutation(len(records))
    for i in (0, 8):
        real(expected, [records[j] for j in order[i : i + 8]], AlignmentParams(1.0), adam)
    saved = SequencePolicy.load(out)
    assert all(np.array_equal(saved.params[k], expected.params[k]) for k in saved.params)


# -- metrics -------------------------------------------------------------------------------------------


def test_metrics_conservation(policy):
    report = emit_metrics(policy, PromptSet.unprompted(2), 40, ["ring_count", "logp"], seed=0)
    assert report.n_samples == 80
    assert report.validity * report.n_samples == pytest.approx(report.n_valid)
    for summary in report.properties.values():
        assert summary.histogram.total == report.n_valid
        assert len(summary.histogram.counts) == N_BINS
    assert 0 <= report.uniqueness <= 1
    if report.diversity is not None:
        assert report.diversity.total == report.n_valid * (report.n_valid - 1) // 2


def test_single_sample_histogram():
    report = summarize_samples([("", ["c1ccccc1"])], ["ring_count"])
    counts = report.properties["ring_count"].histogram.counts
    assert sum(counts) == 1 and counts.count(1) == 1
    assert report.diversity is None


def test_invalid_samples_are_excluded():
    report = summarize_samples([("", ["CCO", "C1CC", "CC"])], ["logp"])
    assert report.n_valid == 2 and report.validity == pytest.approx(2 / 3)


def test_out_of_range_values_fill_edge_bins():
    h = Histogram.of([-100.0, 100.0], -5.0, 10.0)
    assert h.counts[0] == 1 and h.counts[-1] == 1


def test_reference_delta_is_zero(policy, tmp_path):
    prompts = PromptSet.from_smiles(["CCO", "c1ccccc1"])
    a = emit_metrics(policy, prompts, 20, ["logp"], seed=5)
    b = emit_metrics(policy, prompts, 20, ["logp"], seed=5)
    assert all(d is None or d == 0.0 for d in prompt_deltas(a, b, "logp"))
    a.write(tmp_path / "m.json")
    assert MetricsReport.read(tmp_path / "m.json") == a


def test_identical_fraction():
    report = summarize_samples([("CCO", ["CCO", "CCN"]), ("CC", ["CC", "CC"])], ["logp"])
    assert identical_fraction(report) == 0.75


def test_metrics_need_samples(policy):
    with pytest.raises(InvalidArgument):
        emit_metrics(policy, PromptSet.unprompted(), 0, ["logp"], seed=0)


# -- configuration ---------------------------------------------------------------------------------------


def test_config_round_trip(tmp_path):
    cfg = RunConfig(task="align", seed=3, energy=RINGS)
    cfg = override(cfg, "align", beta=(1.0, 5.0), gamma=(0.0, 0.1))
    save_config(cfg, tmp_path / "c.yaml")
    back = load_config(tmp_path / "c.yaml")
    assert back == cfg
    assert len(back.align.grid()) == 4


@pytest.mark.parametrize(
    "bad",
    [
        {"surprise": 1},
        {"version": 2},
        {"task": "dance"},
        {"align": {"mode": "ppo"}},
        {"align": {"beta": [-1.0]}},
        {"dataset": {"k": 1}},
        {"model": {"width": 10, "heads": 3}},
        {"energy": {"kind": "spline"}},
        {"paths": {"nowhere": "x"}},
    ],
)
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        config_from_dict(bad)


def test_require_seed_and_paths(tmp_path):
    cfg = RunConfig()
    with pytest.raises(ConfigError):
        cfg.require_seed()
    with pytest.raises(ConfigError):
        override(cfg, "paths", reference=str(tmp_path / "missing")).require_paths(must_exist=("reference",))


# -- command line ------------------------------------------------------------------------------------------


def _tiny_config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(
        yaml.safe_dump(
            {
                "model": {"layers": 1, "heads": 2, "width": 16, "max_len": 64},
                "pretrain": {"lr": 3e-3, "epochs": 2, "batch_size": 16},
                "align_opt": {"lr": 1e-3, "epochs": 1, "batch_size": 8},
                "dataset": {"k": 4, "groups": 3},
                "sampling": {"n_samples": 10},
            }
        )
    )
    return str(path)


def test_cli_end_to_end(tmp_path):
    cfg = _tiny_config(tmp_path)
    p = lambda name: str(tmp_path / name)  # noqa: E731
    energy = json.dumps(spec_to_dict(RINGS))
    assert main(["gen-corpus", "--seed", "0", "--family", "mixed", "--size", "40", "--out", p("corpus.txt")]) == 0
    assert main(["pretrain", "--config", cfg, "--seed", "0", "--corpus", p("corpus.txt"), "--out", p("ref.npz")]) == 0
    for name in ("d1.jsonl", "d2.jsonl"):
        args = ["gen-dataset", "--config", cfg, "--seed", "1", "--checkpoint", p("ref.npz"), "--out", p(name)]
        assert main(args + ["--energy", energy]) == 0
    assert (tmp_path / "d1.jsonl").read_bytes() == (tmp_path / "d2.jsonl").read_bytes()
    assert len(read_records(p("d1.jsonl"))) == 18
    args = ["align", "--config", cfg, "--seed", "2", "--reference", p("ref.npz"), "--dataset", p("d1.jsonl")]
    assert main(args + ["--out", p("al.npz"), "--log", p("log.json"), "--beta", "1", "5"]) == 0
    assert (tmp_path / "al_b1_g0.npz").exists() and (tmp_path / "al_b5_g0.npz").exists()
    assert json.loads((tmp_path / "log_b5_g0.json").read_text())["mode"] == "era"
    assert main(["sample", "--config", cfg, "--seed", "3", "--checkpoint", p("al_b1_g0.npz"), "--out", p("s.txt")]) == 0
    assert len((tmp_path / "s.txt").read_text().splitlines()) == 10
    args = ["metrics", "--config", cfg, "--seed", "3", "--checkpoint", p("al_b1_g0.npz"), "--out", p("m.json")]
    assert main(args) == 0
    assert MetricsReport.read(p("m.json")).n_samples == 10


def test_cli_tabular_verify(tmp_path, capsys):
    assert main(["tabular-verify", "--seed", "0", "--count", "3"]) == 0
    assert all(r["converged"] for r in json.loads(capsys.readouterr().out))
    args = ["tabular-verify", "--seed", "0", "--method", "gd", "--max-steps", "2", "--beta", "5"]
    assert main(args) == 3


def test_cli_config_errors(tmp_path):
    assert main(["gen-corpus", "--family", "mixed", "--size", "3"]) == 2  # missing seed
    (tmp_path / "bad.yaml").write_text("surprise: 1\n")
    assert main(["gen-corpus", "--config", str(tmp_path / "bad.yaml"), "--seed", "0"]) == 2
    assert main(["sample", "--seed", "0", "--checkpoint", str(tmp_path / "nope.npz")]) == 2
    assert main(["gen-corpus", "--seed", "0", "--family", "mixed", "--size", "0"]) == 2
    assert main(["tabular-verify", "--count", "1"]) == 2  # random instances need a seed
    assert main(["gen-dataset", "--seed", "0", "--checkpoint", str(tmp_path / "x"), "--out", "y"]) == 2


def test_cli_training_failure(tmp_path, policy, records, monkeypatch):
    policy.save(tmp_path / "ref.npz")
    write_records(tmp_path / "d.jsonl", records)

    def boom(*a, **k):
        raise TrainingFailure("ERA loss became non-finite")

    monkeypatch.setattr(run_module, "era_align_step", boom)
    args = ["align", "--seed", "0", "--reference", str(tmp_path / "ref.npz"), "--dataset", str(tmp_path / "d.jsonl")]
    assert main(args + ["--out", str(tmp_path / "out.npz")]) == 3
    assert (tmp_path / "out.npz").read_bytes() == (tmp_path / "ref.npz").read_bytes()


def test_pretraining_on_generated_corpus_halves_loss():
    corpus = generate_corpus("mixed", 200, 0)
    opt = AdamConfig(lr=3e-3, epochs=20, batch_size=32)
    policy, report = pretrain_policy(corpus, MODEL, opt, seed=0)
    fresh = SequencePolicy.create(MODEL, policy.vocab, 0)
    initial = cross_entropy(fresh, fresh.batch([((), tuple(tokenize_smiles(s))) for s in corpus]))
    assert report.epoch_losses[-1] <= 0.5 * initial
    # non-increasing across epochs within 5%
    assert all(b <= a * 1.05 for a, b in zip(report.epoch_losses, report.epoch_losses[1:]))
