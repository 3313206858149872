"""Estimator wrappers: params contract, transform semantics, fit/predict."""
import numpy as np
import pytest

from mfcd import synth, xform
from mfcd.estimators import (ClipAssembler, CompressedVideoClassifier,
                             RawVideoClassifier, check_labels, check_videos)

_SYNTH = synth.SynthConfig(height=16, width=16, samples_per_class=2,
                           sprite_min=4, sprite_max=6)


def _videos_and_labels():
    data = synth.generate(_SYNTH)
    return [s.video for s in data], np.array([s.label for s in data])


# ---------------------------------------------------------------------------
# validation helpers

def test_check_videos_accepts_uniform_uint8():
    videos, _ = _videos_and_labels()
    out = check_videos(videos)
    assert len(out) == len(videos)


def test_check_videos_rejects_bad_input():
    with pytest.raises(ValueError, match="at least one"):
        check_videos([])
    with pytest.raises(ValueError, match="uint8"):
        check_videos([np.zeros((4, 8, 8, 3), dtype=np.float32)])
    with pytest.raises(ValueError, match="F, H, W, C"):
        check_videos([np.zeros((4, 8, 8), dtype=np.uint8)])
    with pytest.raises(ValueError, match="geometry"):
        check_videos([np.zeros((4, 8, 8, 3), dtype=np.uint8),
                      np.zeros((4, 16, 16, 3), dtype=np.uint8)])


def test_check_labels_rejects_bad_input():
    with pytest.raises(ValueError, match="shape"):
        check_labels([0, 1], 3)
    with pytest.raises(ValueError, match="integers"):
        check_labels([0.5, 1.0], 2)


# ---------------------------------------------------------------------------
# params contract

@pytest.mark.parametrize("est", [ClipAssembler(), RawVideoClassifier(),
                                 CompressedVideoClassifier()])
def test_get_params_round_trips_through_init(est):
    params = est.get_params()
    rebuilt = type(est)(**params)
    assert rebuilt.get_params() == params


def test_set_params_returns_self_and_updates():
    est = ClipAssembler()
    assert est.set_params(block=16, clip_format=xform.RAW) is est
    assert est.block == 16 and est.clip_format == xform.RAW


def test_set_params_rejects_unknown():
    with pytest.raises(ValueError, match="invalid parameter"):
        RawVideoClassifier().set_params(bogus=1)


def test_classifier_defaults_match_training_defaults():
    params = RawVideoClassifier().get_params()
    assert params["lr"] == 0.005
    assert params["momentum"] == 0.9
    assert params["weight_decay"] == 0.0001


# ---------------------------------------------------------------------------
# ClipAssembler

def test_clip_assembler_matches_assemble_clip():
    videos, _ = _videos_and_labels()
    asm = ClipAssembler(clip_format=xform.FULL, gop_len=12)
    clips = asm.fit_transform(videos)
    assert clips.shape == (len(videos), 3, 12, 16, 16)
    assert clips.dtype == np.float32
    # first video, first GOP must agree with the xform path
    from mfcd import codec
    stream = codec.encode(videos[0], asm.block, asm.search, asm.gop_len)
    expect = xform.assemble_clip(stream.gops[0], xform.FULL, asm.block,
                                 raw=videos[0][:12])
    np.testing.assert_allclose(clips[0], expect.astype(np.float32), atol=0)


def test_clip_assembler_unknown_format():
    with pytest.raises(ValueError, match="unknown clip format"):
        ClipAssembler(clip_format="dct").fit([])


def test_clip_assembler_fit_is_stateless_noop():
    videos, _ = _videos_and_labels()
    asm = ClipAssembler()
    assert asm.fit(videos) is asm
    assert asm.get_params() == ClipAssembler().get_params()


# ---------------------------------------------------------------------------
# classifiers

def test_raw_classifier_fit_predict_score():
    videos, labels = _videos_and_labels()
    clf = RawVideoClassifier(epochs=1, batch_size=8, stage_widths=(8,),
                             fibers=2, seed=0)
    assert clf.fit(videos, labels) is clf
    pred = clf.predict(videos)
    assert pred.shape == labels.shape
    assert set(pred) <= set(labels)
    score = clf.score(videos, labels)
    assert score == float((pred == labels).mean())


def test_predict_before_fit_raises():
    videos, _ = _videos_and_labels()
    with pytest.raises(RuntimeError, match="not fitted"):
        RawVideoClassifier().predict(videos)


def test_classes_remapping_non_contiguous_labels():
    videos, labels = _videos_and_labels()
    shifted = labels * 10 + 3   # non-contiguous label values
    clf = RawVideoClassifier(epochs=1, batch_size=8, stage_widths=(8,),
                             fibers=2, seed=0)
    clf.fit(videos, shifted)
    np.testing.assert_array_equal(clf.classes_, np.unique(shifted))
    assert set(clf.predict(videos)) <= set(shifted)


def test_compressed_classifier_plain_and_distilled():
    videos, labels = _videos_and_labels()
    teacher = RawVideoClassifier(epochs=1, batch_size=8, stage_widths=(8,),
                                 fibers=2, seed=0).fit(videos, labels)
    stu = CompressedVideoClassifier(teacher=teacher, clip_format=xform.FULL,
                                    epochs=1, batch_size=8, stage_widths=(8,),
                                    fibers=2, seed=1)
    stu.fit(videos, labels)
    assert stu.predict(videos).shape == labels.shape
    plain = CompressedVideoClassifier(clip_format=xform.RES_ONLY, epochs=1,
                                      batch_size=8, stage_widths=(8,),
                                      fibers=2, seed=1)
    plain.fit(videos, labels)
    assert 0.0 <= plain.score(videos, labels) <= 1.0


def test_compressed_classifier_unfitted_teacher_raises():
    videos, labels = _videos_and_labels()
    stu = CompressedVideoClassifier(teacher=RawVideoClassifier(), epochs=1,
                                    batch_size=8, stage_widths=(8,), fibers=2)
    with pytest.raises(RuntimeError, match="teacher is not fitted"):
        stu.fit(videos, labels)
