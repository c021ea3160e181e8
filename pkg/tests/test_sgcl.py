import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dlfkit.netcore import grad_check
from dlfkit.sgcl import Box, ConditionLayer, assign_box, box_fields, embed_and_fuse, inside_mask
from dlfkit.verify import _brute_assign, _brute_inside, oracle_mismatches, random_instance


def test_box_validation_and_fields():
    b = Box([0.1, 0.2], [0.3, 0.4], 0.5)
    np.testing.assert_array_equal(b.fields(), [0.1, 0.2, 0.3, 0.4, 0.5])
    assert Box.from_json(b.to_json()).fields().tolist() == b.fields().tolist()
    with pytest.raises(ValueError):
        Box([0, 0], [0.0, 1.0])
    with pytest.raises(ValueError):
        Box([0, 0], [1.0, 1.0, 1.0])


def test_oracle_equivalence_thousand_instances():
    assert oracle_mismatches(n_instances=1000, seed=5) == 0


def test_large_instance():
    rng = np.random.default_rng(1)
    pts = rng.uniform(-1, 1, (1000, 2))
    boxes = [Box(c, [0.05, 0.05], y) for c, y in zip(rng.uniform(-1, 1, (1000, 2)), rng.uniform(-3, 3, 1000))]
    a = assign_box(pts, boxes)
    np.testing.assert_array_equal(a, _brute_assign(pts, boxes))
    np.testing.assert_array_equal(inside_mask(pts, boxes, a), _brute_inside(pts, boxes, a))


def test_tie_goes_to_lowest_index():
    boxes = [Box([1.0, 0.0], [0.5, 0.5]), Box([-1.0, 0.0], [0.5, 0.5])]
    assert assign_box(np.array([[0.0, 0.0]]), boxes)[0] == 0


def test_assign_ignores_box_size():
    # a huge box whose center is farther loses to a tiny nearer one
    boxes = [Box([0.0, 0.0], [10.0, 10.0]), Box([0.9, 0.0], [0.01, 0.01])]
    assert assign_box(np.array([[0.6, 0.0]]), boxes)[0] == 1


@given(seed=st.integers(0, 100_000), theta=st.floats(-np.pi, np.pi))
def test_mask_invariant_under_rigid_rotation(seed, theta):
    rng = np.random.default_rng(seed)
    pts, boxes = random_instance(rng)
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    a = assign_box(pts, boxes)
    m = inside_mask(pts, boxes, a)
    m_r = inside_mask(pts @ rot.T, [Box(rot @ b.center, b.size, b.yaw + theta) for b in boxes], a)
    # ignore points within rounding distance of an edge
    margin = []
    for p, k in zip(pts, a):
        b = boxes[k]
        cy, sy = np.cos(b.yaw), np.sin(b.yaw)
        d = p - b.center
        lx, ly = cy * d[0] + sy * d[1], -sy * d[0] + cy * d[1]
        margin.append(min(abs(abs(lx) - b.size[0] / 2), abs(abs(ly) - b.size[1] / 2)))
    far = np.array(margin) > 1e-9
    np.testing.assert_array_equal(m[far], m_r[far])


def test_errors():
    with pytest.raises(ValueError):
        assign_box(np.zeros((2, 2)), [])
    with pytest.raises(ValueError):
        assign_box(np.zeros((2, 3)), [Box([0, 0], [1, 1])])
    with pytest.raises(ValueError):
        inside_mask(np.zeros((1, 2)), [Box([0, 0], [1, 1])], [3])
    assert inside_mask(np.zeros((3, 2)), [], None).tolist() == [0, 0, 0]


def test_box_fields_zero_for_background():
    boxes = [Box([0.2, 0.2], [0.5, 0.5], 0.3)]
    f = box_fields(boxes, np.array([0, 0]), np.array([1, 0]))
    np.testing.assert_array_equal(f[0], boxes[0].fields())
    np.testing.assert_array_equal(f[1], np.zeros(5))


def test_zero_fusion_output_is_exact_identity():
    rng = np.random.default_rng(2)
    layer = ConditionLayer(8, rng=rng)
    feats = rng.normal(size=(10, 8))
    out = layer(feats, rng.integers(0, 2, 10), rng.normal(size=(10, 5)))
    np.testing.assert_array_equal(out.fused, feats)
    assert out.e_sem.shape == out.e_geo.shape == (10, 16)


def test_background_geo_embedding_from_zero_fields():
    rng = np.random.default_rng(3)
    layer = ConditionLayer(4, rng=rng)
    mask = np.array([1, 0, 0])
    fields = np.array([[0.1, 0.2, 0.3, 0.4, 0.5], [0, 0, 0, 0, 0], [0, 0, 0, 0, 0]], dtype=float)
    emb = layer(np.zeros((3, 4)), mask, fields)
    np.testing.assert_array_equal(emb.e_geo[1], layer.geo.predict(np.zeros((1, 5)))[0])
    np.testing.assert_array_equal(emb.e_sem[1], layer.sem.params["W0"][0])


def test_condition_layer_backward_matches_finite_differences():
    rng = np.random.default_rng(4)
    layer = ConditionLayer(3, embed_dim=4, hidden=5, rng=rng)
    for net in layer.nets().values():
        for p in net.params.values():
            p[...] = rng.normal(0, 0.5, p.shape)
    feats, mask, fields = rng.normal(size=(6, 3)), rng.integers(0, 2, 6), rng.normal(size=(6, 5))
    target = rng.normal(size=(6, 3))

    def loss():
        return 0.5 * np.sum((layer(feats, mask, fields).fused - target) ** 2)

    emb = layer(feats, mask, fields)
    g_feat, grads = layer.backward(emb, emb.fused - target)
    np.testing.assert_allclose(g_feat, emb.fused - target)
    h = 1e-6
    for name, net in layer.nets().items():
        for pname, p in net.params.items():
            flat = p.reshape(-1)
            for idx in range(0, flat.size, max(1, flat.size // 5)):
                orig = flat[idx]
                flat[idx] = orig + h
                up = loss()
                flat[idx] = orig - h
                down = loss()
                flat[idx] = orig
                num = (up - down) / (2 * h)
                ana = grads[name][pname].reshape(-1)[idx]
                assert abs(num - ana) <= 1e-4 * max(1e-6, abs(num) + abs(ana))


def test_fusion_width_mismatch():
    layer = ConditionLayer(4, rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        embed_and_fuse(np.zeros((2, 5)), [0, 1], np.zeros((2, 5)), layer.sem, layer.geo, layer.fuse)


def test_sem_net_grad_check():
    layer = ConditionLayer(4, rng=np.random.default_rng(5))
    assert grad_check(layer.sem, np.eye(2)).passed
