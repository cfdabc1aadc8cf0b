import numpy as np
import pytest

from protodetect.embedder import (EmbeddingNet, LinearClassifier,
                                  checkpoint_dict, checkpoint_from_dict,
                                  load_checkpoint, save_checkpoint)
from protodetect.numeric import make_rng, softmax


def small_net(seed=0, d=5, hidden=7, e=4, depth=2):
    return EmbeddingNet.init(make_rng(seed), d, hidden, e, depth)


def test_zero_net_gives_zero_output():
    net = EmbeddingNet([(np.zeros((3, 2)), np.zeros(3)),
                        (np.zeros((2, 3)), np.zeros(2))])
    q, _ = net.forward([1.0, -1.0])
    assert np.array_equal(q, np.zeros(2))


def test_identity_net_passes_positive_input_through():
    net = EmbeddingNet([(np.eye(3), np.zeros(3)), (np.eye(3), np.zeros(3))])
    v = np.array([1.0, 2.0, 0.5])
    q, _ = net.forward(v)
    assert np.array_equal(q, v)


def test_forward_deterministic():
    net = small_net(3)
    v = make_rng(9).normal(size=5)
    q1, _ = net.forward(v)
    q2, _ = net.forward(v)
    assert np.array_equal(q1, q2)


def test_forward_dim_mismatch():
    with pytest.raises(ValueError):
        small_net().forward(np.zeros(6))


def test_backward_zero_grad_is_zero():
    net = small_net(1)
    _, cache = net.forward(make_rng(2).normal(size=5))
    grads, dv = net.backward(cache, np.zeros(4))
    assert all(np.all(dW == 0) and np.all(db == 0) for dW, db in grads)
    assert np.all(dv == 0)


def test_backward_linear_layer_outer_product():
    # identity hidden layer on positive input reduces layer 2 to linear:
    # dW2 = outer(dq, relu(v)) = outer(dq, v)
    net = EmbeddingNet([(np.eye(3), np.zeros(3)),
                        (make_rng(4).normal(size=(2, 3)), np.zeros(2))])
    v = np.array([0.3, 1.2, 2.0])
    _, cache = net.forward(v)
    dq = np.array([1.5, -0.7])
    grads, _ = net.backward(cache, dq)
    assert np.allclose(grads[1][0], np.outer(dq, v), atol=1e-12)
    assert np.allclose(grads[1][1], dq, atol=1e-12)


@pytest.mark.parametrize("depth", [2, 3, 4])
def test_jacobian_matches_finite_differences(depth):
    net = small_net(11, depth=depth)
    v = make_rng(12).normal(size=5)
    q, cache = net.forward(v)
    h = 1e-6
    for k in range(4):
        dq = np.zeros(4)
        dq[k] = 1.0
        _, dv = net.backward(cache, dq)
        for i in range(5):
            vp, vm = v.copy(), v.copy()
            vp[i] += h
            vm[i] -= h
            num = (net.forward(vp)[0][k] - net.forward(vm)[0][k]) / (2 * h)
            assert dv[i] == pytest.approx(num, rel=1e-5, abs=1e-8)


def test_relu_derivative_at_zero_is_zero():
    # input exactly at the kink: backward must not propagate through it
    net = EmbeddingNet([(np.eye(2), np.zeros(2)), (np.eye(2), np.zeros(2))])
    _, cache = net.forward(np.array([0.0, 1.0]))
    _, dv = net.backward(cache, np.array([1.0, 1.0]))
    assert dv[0] == 0.0 and dv[1] == 1.0


def test_classifier_uniform_at_zero_params():
    clf = LinearClassifier(np.zeros((4, 3)), np.zeros(4))
    p = softmax(clf.logits(np.array([1.0, 2.0, 3.0])))
    assert np.allclose(p, 0.25, atol=1e-15)


def test_classifier_constructed_logit():
    q = np.array([1.0, 2.0, 2.0])
    W = np.zeros((3, 3))
    W[2] = q / np.dot(q, q)
    clf = LinearClassifier(W, np.zeros(3))
    logits = clf.logits(q)
    assert logits[2] == pytest.approx(1.0)
    assert logits[0] == logits[1] == 0.0


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    net = small_net(21, depth=3)
    clf = LinearClassifier.init(make_rng(22), 5, 4)
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, net, clf)
    net2, clf2 = load_checkpoint(path)
    for (W1, b1), (W2, b2) in zip(net.layers, net2.layers):
        assert np.array_equal(W1, W2) and np.array_equal(b1, b2)
    assert np.array_equal(clf.W, clf2.W) and np.array_equal(clf.b, clf2.b)


def test_checkpoint_rejects_other_documents():
    with pytest.raises(ValueError):
        checkpoint_from_dict({"format": "something-else"})


def test_checkpoint_dict_shapes():
    net = small_net()
    clf = LinearClassifier.init(make_rng(1), 3, 4)
    doc = checkpoint_dict(net, clf)
    assert doc["embedding_layers"][0]["shape"] == [7, 5]
    assert doc["classifier"]["shape"] == [3, 4]


def test_init_depth_validation():
    with pytest.raises(ValueError):
        EmbeddingNet.init(make_rng(0), 4, 4, 4, depth=1)
