import numpy as np
import pytest

from codeclab.encoder import EncoderConfig, init_weights
from codeclab.tasks import (
    GLYPHS, NUM_CLASSES, SPLITS, CorpusError, TaskError, TaskResult, eval_task, export_corpus,
    fit_linear_probe, fit_task_probe, gen_synth_corpus, task_features, task_labels,
)


@pytest.fixture(scope="module")
def ve():
    return init_weights(EncoderConfig(), 7)


@pytest.fixture(scope="module")
def probes(std_corpus, ve):
    fit = std_corpus.subset("probe")
    return {t: fit_task_probe(ve, fit, t) for t in ("coarse-class", "fine-glyph")}


def test_same_seed_same_pixels():
    a, b = gen_synth_corpus(1, 256), gen_synth_corpus(1, 256)
    assert all(x == y for x, y in zip(a.images, b.images))
    assert a.glyphs == b.glyphs and np.array_equal(a.labels, b.labels)
    c = gen_synth_corpus(2, 256)
    assert any(x != y for x, y in zip(a.images, c.images))


def test_balanced_counts():
    c = gen_synth_corpus(5, 512)
    assert len(c) == 512
    assert np.bincount(c.labels).tolist() == [64] * NUM_CLASSES
    assert all(im.dims == (64, 64, 1) for im in c.images)


def test_too_small_corpus():
    with pytest.raises(CorpusError):
        gen_synth_corpus(1, 8 * 29)
    with pytest.raises(CorpusError):
        gen_synth_corpus(1, 250)


def test_splits_disjoint_and_cover(corpus):
    sets = [set(corpus.indices(s)) for s in SPLITS]
    assert sum(len(s) for s in sets) == len(corpus)
    assert not (sets[0] & sets[1]) and not (sets[1] & sets[2]) and not (sets[0] & sets[2])
    for s in SPLITS:
        assert np.bincount(corpus.subset(s).labels, minlength=8).min() > 0


def test_class_means_pairwise_distinct(std_corpus):
    px = np.stack([im.pixels[:, :, 0] for im in std_corpus.images]).astype(float)
    means = [px[std_corpus.labels == k].mean(axis=0) for k in range(NUM_CLASSES)]
    for i in range(NUM_CLASSES):
        for j in range(i + 1, NUM_CLASSES):
            assert np.linalg.norm(means[i] - means[j]) > 0


def test_separable_probe_matches_perceptron():
    r = np.random.default_rng(0)
    x = np.concatenate([r.normal(-3, 1, (40, 2)), r.normal(3, 1, (40, 2))])
    y = np.repeat([0, 1], 40)
    # independent oracle: a perceptron converging to zero training errors
    w, b = np.zeros(2), 0.0
    for _ in range(100):
        for xi, yi in zip(x, 2 * y - 1):
            if yi * (xi @ w + b) <= 0:
                w, b = w + yi * xi, b + yi
    assert np.all((x @ w + b > 0) == (y == 1))
    head = fit_linear_probe(x, y, 2, seed=0)
    assert head.accuracy(x, y) == 1.0


def test_no_signal_gives_majority_rate():
    x = np.ones((30, 4))
    y = np.array([0] * 18 + [1] * 12)
    assert fit_linear_probe(x, y).accuracy(x, y) == pytest.approx(18 / 30)


def test_probe_seeded():
    r = np.random.default_rng(1)
    x, y = r.normal(size=(50, 3)), r.integers(0, 3, 50)
    a, b = fit_linear_probe(x, y, 3, seed=4), fit_linear_probe(x, y, 3, seed=4)
    assert np.array_equal(a.weight, b.weight) and np.array_equal(a.bias, b.bias)


def test_single_class_rejected():
    with pytest.raises(TaskError):
        fit_linear_probe(np.zeros((5, 2)), np.zeros(5, dtype=int))


def test_ties_go_to_lowest_class():
    head = fit_linear_probe(np.ones((6, 2)), np.array([0, 1, 2, 0, 1, 2]), 3)
    head.weight[:] = 0
    head.bias[:] = 0
    assert head.predict(np.ones((2, 2))).tolist() == [0, 0]


def test_task_feature_shapes():
    f = np.random.default_rng(0).normal(size=(3, 64, 16))
    assert task_features(f, "coarse-class").shape == (3, 16 * 16)
    assert task_features(f, "fine-glyph").shape == (12, 16)
    with pytest.raises(TaskError):
        task_features(f, "ocr")


def test_glyph_labels_order(corpus):
    lab = task_labels(corpus, "fine-glyph")
    assert lab.shape == (4 * len(corpus),)
    assert GLYPHS[lab[1]] == corpus.glyphs[0][1]


def test_uncompressed_beats_blocky_floor(std_corpus, ve, probes):
    ev = std_corpus.subset("eval")
    for task, head in probes.items():
        clean = eval_task(ve, head, ev, task)
        low = eval_task(ve, head, ev, task, codec=(0, 0))
        assert clean.accuracy >= low.accuracy


def test_fit_split_scores_at_least_eval(std_corpus, ve, probes):
    fit, ev = std_corpus.subset("probe"), std_corpus.subset("eval")
    from codeclab.tasks import encoder_features
    for task, head in probes.items():
        own = head.accuracy(task_features(encoder_features(ve, fit.images), task), task_labels(fit, task))
        assert own >= eval_task(ve, head, ev, task).accuracy


def test_leakage_and_empty_split(std_corpus, ve, probes):
    head = probes["coarse-class"]
    with pytest.raises(TaskError, match="leakage"):
        eval_task(ve, head, std_corpus.subset("probe"), "coarse-class")
    empty = std_corpus.subset("eval").subset("train")
    with pytest.raises(TaskError):
        eval_task(ve, head, empty, "coarse-class")


def test_true_condition_policy_uses_condition(std_corpus, ve, probes, rng):
    ev = std_corpus.subset("eval").subset("eval")
    w = ve.replace(cond_proj=rng.normal(0, 1.0, (64, 32)))
    head = probes["fine-glyph"]
    a = eval_task(w, head, ev, "fine-glyph", codec=(1, 0), policy="none")
    b = eval_task(w, head, ev, "fine-glyph", codec=(1, 0), policy="true")
    assert a.n == b.n == 4 * len(ev)
    assert a.correct != b.correct


def test_pipeline_determinism(std_corpus, ve):
    fit, ev = std_corpus.subset("probe"), std_corpus.subset("eval")
    r1 = eval_task(ve, fit_task_probe(ve, fit, "coarse-class"), ev, "coarse-class", codec=(2, 1))
    r2 = eval_task(ve, fit_task_probe(ve, fit, "coarse-class"), ev, "coarse-class", codec=(2, 1))
    assert r1 == r2


def test_task_result_bounds():
    with pytest.raises(TaskError):
        TaskResult("coarse-class", 1.5, 3)
    assert TaskResult("fine-glyph", 0.5, 4, 2).accuracy == 2 / 4


def test_export(tmp_path, corpus):
    p = export_corpus(corpus, tmp_path)
    rows = p.read_text().splitlines()
    assert rows[0] == "file,split,class,glyphs" and len(rows) == len(corpus) + 1
    assert (tmp_path / "img_00000.png").exists()
