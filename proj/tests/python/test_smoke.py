"""Smoke tests for the python bindings."""

import json
import math

import pytest

import fedblock


def test_normalize_domain():
    assert fedblock.normalize_domain("Ads.Example.COM.") == "ads.example.com"
    assert fedblock.normalize_domain("localhost") is None


def test_parse_rule_kinds():
    rule = fedblock.parse_rule("0.0.0.0 tracker.example.net", "Hosts (0)")
    assert rule["kind"] == "domain_block"
    assert rule["domain"] == "tracker.example.net"

    allow = fedblock.parse_rule("@@||good.example.com^", "Adblocker-syntax domains")
    assert allow["kind"] == "domain_allow"
    assert allow["domain"] == "good.example.com"

    option = fedblock.parse_rule("||ads.example.com^$third-party", "Adblock Plus")
    assert option["kind"] == "element_or_option"
    assert option["domain"] is None


def test_categorize_list():
    assert fedblock.categorize_list("blocklists for pi-hole servers") == "iot"
    assert fedblock.categorize_list("AdBlock list for iOS and Android") == "mobile"
    assert fedblock.categorize_list("General web annoyances", "cosmetic rules") == "rejected"


def test_hash_embedder_deterministic():
    embedder = fedblock.HashEmbedder(dim=64)
    v1, unk1 = embedder.embed("tracker pixel analytics")
    v2, _ = embedder.embed("tracker pixel analytics")
    assert v1 == v2
    assert not unk1
    assert len(v1) == 64
    assert math.isclose(sum(x * x for x in v1), 1.0, rel_tol=1e-12)


def test_canonicalize_domains():
    assert fedblock.canonicalize_domains(["ads.tracking.ads.com"]) == "ads com tracking"


def test_embed_whois_lines_mean():
    embedder = fedblock.HashEmbedder(dim=16)
    mean = fedblock.embed_whois_lines(["alpha beta", "gamma"], embedder)
    a, _ = embedder.embed("alpha beta")
    b, _ = embedder.embed("gamma")
    for m, x, y in zip(mean, a, b):
        assert math.isclose(m, (x + y) / 2.0, abs_tol=1e-15)


def test_roc_auc_exact():
    assert fedblock.roc_auc([0.9, 0.8, 0.4], [1, 0, 1]) == 0.5
    assert fedblock.roc_auc([0.1, 0.9], [0, 1]) == 1.0


def test_train_and_evaluate_roundtrip(tmp_path):
    # linearly separable toy set
    features = [[1.5 + 0.1 * (i % 5), 1.0] for i in range(40)]
    features += [[-1.5 - 0.1 * (i % 5), -1.0] for i in range(40)]
    labels = [1] * 40 + [0] * 40

    model = fedblock.Model.init(input_width=2, hidden=[8, 4], seed=3)
    model, curve = fedblock.train_model(model, features, labels, epochs=150, seed=3)
    assert len(curve) == 150
    assert curve[-1] < curve[0]

    metrics = fedblock.evaluate_model(model, features, labels)
    assert set(metrics) == {"accuracy", "roc_auc", "f1", "tp", "fp", "tn", "fn"}
    assert metrics["accuracy"] >= 0.99

    path = tmp_path / "model.bin"
    model.save(str(path))
    loaded = fedblock.Model.load(str(path))
    assert loaded.forward(features[0]) == model.forward(features[0])


def test_model_width_mismatch_raises():
    model = fedblock.Model.init(input_width=4, hidden=[4], seed=1)
    with pytest.raises(fedblock.FedblockError):
        model.forward([1.0, 2.0])


def test_run_experiment_smoke():
    import random

    rng = random.Random(7)
    def draw(n):
        feats, labels = [], []
        for i in range(n):
            label = i % 2
            center = 1.0 if label else -1.0
            feats.append([center + rng.gauss(0, 1) for _ in range(8)])
            labels.append(label)
        return feats, labels

    pool_x, pool_y = draw(300)
    test_x, test_y = draw(60)
    config = json.loads(fedblock.default_experiment_config())
    config.update(
        n_clients=3, unique_per_client=4, new_domains=6, base_size=20, rounds=4,
        sync_interval=2, local_epochs=2, repeats=1, hidden=[8, 4], batch_size=8, seed=11,
        probe_rounds=2,
    )
    report = fedblock.run_experiment(json.dumps(config), pool_x, pool_y, test_x, test_y)
    assert 0.0 <= report["central_test_accuracy"] <= 1.0
    assert report["finetuned_vs_private_test"] in {"finetuned", "other", "tie"}
    assert report["csv_row"].startswith("0,3,4,6,")

    # same config, same bytes
    report2 = fedblock.run_experiment(json.dumps(config), pool_x, pool_y, test_x, test_y)
    assert report2["csv_row"] == report["csv_row"]
