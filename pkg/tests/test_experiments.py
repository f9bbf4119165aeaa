import pytest

from memhots.analysis import MIConfig
from memhots.experiments import ProtocolConfig, make_classifier, run_protocol

SMALL = dict(clusters=(8, 16), radii=(2, 1), pool=4, surfaces_per_layer=4000, batch_size=256,
             max_iter=40)


def test_protocol_on_synthetic_corpus(synth_root):
    cfg = ProtocolConfig(str(synth_root), fraction=1.0, seed=1, crop28=False, mi=True,
                         mi_config=MIConfig(deltas_us=(1e3, 1e5), draws=2), sweep=(1.0, 10.0),
                         **SMALL)
    metrics, net, clfs = run_protocol(cfg)
    assert (metrics["n_train"], metrics["n_test"]) == (60, 30)
    assert set(clfs) == {(1, "hist"), (1, "svc"), (2, "hist"), (2, "svc")}
    for mode in ("ideal", "noisy"):
        assert all(0.0 <= v <= 1.0 for v in metrics["accuracy"][mode].values())
    assert set(metrics["dislocation"]) == {1, 2}
    for layer in (1, 2):
        entry = metrics["mi"][layer]
        assert len(entry["ideal"]) == len(entry["loss"]) == 2
    assert set(metrics["sweep"]) == {"1.0", "10.0"}
    # digits are far from chance even on this tiny corpus
    assert metrics["accuracy"]["ideal"]["svc@2"] > 0.3


def test_protocol_is_deterministic(synth_root):
    cfg = ProtocolConfig(str(synth_root), fraction=0.5, seed=2, crop28=False, **SMALL)
    a, _, _ = run_protocol(cfg)
    b, _, _ = run_protocol(cfg)
    assert a == b


def test_unknown_classifier():
    with pytest.raises(ValueError):
        make_classifier("knn")
    assert make_classifier("bhattacharyya").metric == "bhattacharyya"
