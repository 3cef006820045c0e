"""Supervised-contrastive airwriting recognition.

Thin Python surface over the C++ core: dataset synthesis, IMU preprocessing,
the supervised contrastive loss and its analytic gradient, whole-manifest
training, leave-one-subject-out evaluation, classifier-head transfer, and
checkpoint inference via :class:`Model`.

Quick start::

    import sclair

    manifest = sclair.synth("corpus", subjects=4, reps=5, seed=42)
    report = sclair.train(manifest, loss="scl", max_epochs=12, out="model.sclr")
    model = sclair.Model.load("model.sclr")
"""

from ._sclair import (
    NUM_CHANNELS,
    NUM_CLASSES,
    SEQ_LEN,
    Model,
    __version__,
    finetune,
    index_label,
    label_index,
    loso,
    preprocess,
    supcon_grad,
    supcon_loss,
    synth,
    train,
)

__all__ = [
    "NUM_CHANNELS",
    "NUM_CLASSES",
    "SEQ_LEN",
    "Model",
    "__version__",
    "finetune",
    "index_label",
    "label_index",
    "loso",
    "preprocess",
    "supcon_grad",
    "supcon_loss",
    "synth",
    "train",
]
