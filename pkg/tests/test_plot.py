import xml.etree.ElementTree as ET

from rdsnet import plot


def test_svg_is_valid_and_round_trips():
    curves = [("a<b", [1.0, 0.5, 0.0], [0.2, 0.6, 1.0]), ("second", [0.9, 0.1], [0.5, 0.9])]
    text = plot.pr_svg(curves, title="t & t")
    ET.fromstring(text)
    back = plot.read_polylines(text)
    assert [c[0] for c in back] == ["a<b", "second"]
    for (_, r, p), (_, r2, p2) in zip(curves, back):
        assert all(abs(a - b) < 1e-5 for a, b in zip(r, r2))
        assert all(abs(a - b) < 1e-5 for a, b in zip(p, p2))


def test_deterministic():
    c = [("x", [0.1, 0.2], [0.3, 0.4])]
    assert plot.pr_svg(c) == plot.pr_svg(c)
