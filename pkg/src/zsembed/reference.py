"""Published full-scale CUB-200 reference results.

These numbers come from the original experiments this pipeline
miniaturizes: 4K-dim VGG features over 200 bird classes (150 train / 50
test), 312 attributes, and wikipedia-derived word vectors. They are
recorded for orientation when running the real-data hook; reproducing
them requires those exact inputs and is out of scope for the synthetic
desk-scale pipeline.

Keys: ``metric.trainVP-testVP.cue``; Top-1 values are mean per-class
accuracies in percent, retrieval rows carry R@1/R@5/R@10/mAUC.
"""

CUB200_TOP1 = {
    "top1.vp1-vp1.attributes": 43.3,
    "top1.vp1-vp1.word2vec": 25.0,
    "top1.vp1-vp1.bow": 21.8,
    "top1.vp19-vp1.attributes": 47.0,
    "top1.vp19-vp1.word2vec": 26.8,
    "top1.vp19-vp1.bow": 22.6,
    "top1.vp19-vp19.attributes": 56.5,
    "top1.vp19-vp19.word2vec": 32.1,
    "top1.vp19-vp19.bow": 26.0,
    "top1.vp19-vp1.nad2_50": 30.5,
    "top1.vp19-vp19.nad2_50": 33.9,
    "top1.vp1-vp1.nad2_50": 23.6,
    "top1.vp19-vp1.word2vec+bow": 33.2,
    "top1.vp19-vp19.word2vec+bow": 34.7,
    "top1.vp19-vp1.word2vec+nad2_50": 31.0,
    "top1.vp19-vp19.word2vec+nad2_50": 32.1,
    "top1.vp19-vp1.bow+nad2_50": 30.0,
    "top1.vp19-vp19.bow+nad2_50": 34.3,
}

# The bilinear structured-joint-embedding baseline on the same features.
CUB200_BILINEAR_BASELINE_TOP1 = {
    "top1.vp1-vp1.attributes": 50.2,
    "top1.vp1-vp1.word2vec": 24.2,
    "top1.vp1-vp1.bow": 20.0,
}

# (R@1, R@5, R@10, mAUC) per train/test part setting and cue.
CUB200_RETRIEVAL = {
    "retrieval.vp1-vp1.attributes": (47.0, 91.7, 95.9, 36.5),
    "retrieval.vp1-vp1.word2vec": (37.5, 55.6, 73.2, 22.8),
    "retrieval.vp1-vp1.bow": (33.2, 49.8, 61.0, 16.2),
    "retrieval.vp19-vp1.attributes": (65.7, 87.7, 91.8, 38.7),
    "retrieval.vp19-vp1.word2vec": (40.6, 59.0, 67.3, 24.5),
    "retrieval.vp19-vp1.bow": (30.8, 46.6, 57.0, 17.3),
    "retrieval.vp19-vp19.attributes": (61.6, 93.9, 100.0, 46.6),
    "retrieval.vp19-vp19.word2vec": (43.1, 69.5, 71.5, 30.7),
    "retrieval.vp19-vp19.bow": (30.6, 48.6, 50.7, 22.0),
}

CUB200_N_CLASSES = 200
CUB200_N_TRAIN_CLASSES = 150
CUB200_N_TEST_CLASSES = 50
CUB200_N_ATTRIBUTES = 312
CUB200_N_VISUAL_PARTS = 19
