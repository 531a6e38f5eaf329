"""LP/MPS writers and readers: exact round-trips including the quadratic
row, bound handling and tag recovery."""

import numpy as np
import pytest

from agrochain.formulation import ModelIR, VarKey, build_model
from agrochain.modelfiles import (
    export_model,
    parse_var_name,
    read_lp,
    read_mps,
    write_lp,
    write_mps,
)


def _assert_equivalent(a: ModelIR, b: ModelIR):
    """Equality up to variable ordering (readers recover first-seen order)."""
    names_a = [k.name for k in a.var_keys]
    names_b = [k.name for k in b.var_keys]
    assert sorted(names_a) == sorted(names_b)

    def profile(ir):
        obj = ir.objective_vector()
        return {
            k.name: (ir.kinds[i], ir.lb[i], ir.ub[i], obj[i])
            for i, k in enumerate(ir.var_keys)
        }

    pa, pb = profile(a), profile(b)
    for name, (kind, lb, ub, c) in pa.items():
        kb, lbb, ubb, cb = pb[name]
        assert kind == kb, name
        assert lb == pytest.approx(lbb, abs=1e-12), name
        assert (ub == pytest.approx(ubb, abs=1e-12)) or (
            not np.isfinite(ub) and not np.isfinite(ubb)
        ), name
        assert c == pytest.approx(cb, abs=1e-12), name

    rng = np.random.default_rng(5)
    probe_by_name = {name: rng.uniform(-3, 3) for name in names_a}
    vec_a = np.array([probe_by_name[k.name] for k in a.var_keys])
    vec_b = np.array([probe_by_name[k.name] for k in b.var_keys])

    assert a.n_rows == b.n_rows
    rows_b = {r.name: r for r in b.rows}
    for ra in a.rows:
        rb = rows_b[ra.name]
        assert ra.sense == rb.sense
        assert ra.rhs == pytest.approx(rb.rhs, abs=1e-12)
        assert ra.value(vec_a) == pytest.approx(rb.value(vec_b), abs=1e-9)
    if a.quadratic is None:
        assert b.quadratic is None
    else:
        assert b.quadratic is not None
        assert a.quadratic.value(vec_a) == pytest.approx(
            b.quadratic.value(vec_b), rel=1e-12
        )
        assert a.quadratic.rhs == pytest.approx(b.quadratic.rhs, abs=1e-12)


@pytest.fixture(scope="module")
def loss_model(micro_loss):
    return build_model(micro_loss, include_variance=True)


def test_lp_round_trip(tmp_path, loss_model):
    path = tmp_path / "m.lp"
    write_lp(loss_model, path)
    again = read_lp(path)
    _assert_equivalent(loss_model, again)


def test_mps_round_trip(tmp_path, loss_model):
    path = tmp_path / "m.mps"
    write_mps(loss_model, path)
    again = read_mps(path)
    _assert_equivalent(loss_model, again)


@pytest.mark.parametrize("fmt,reader", [("lp", read_lp), ("mps", read_mps)])
def test_tag_recovery(tmp_path, loss_model, fmt, reader):
    path = tmp_path / f"m.{fmt}"
    export_model(loss_model, fmt, path)
    again = reader(path)
    orig_tags = loss_model.stats().rows_by_tag
    new_tags = again.stats().rows_by_tag
    assert new_tags == orig_tags  # names encode the tags losslessly here


def test_parse_var_name():
    assert parse_var_name("alpha_start(2,13,1)") == VarKey("alpha_start", (2, 13, 1))
    assert parse_var_name("delta(2)") == VarKey("delta", (2,))
    bare = parse_var_name("z42")
    assert bare.family == "z42" and bare.indices == ()


def test_fixed_integer_vs_binary_round_trip(tmp_path):
    ir = ModelIR()
    ir.add_variable(VarKey("b", (1,)), "binary", 0.0, 0.0)  # fixed-off binary
    ir.add_variable(VarKey("n", (1,)), "integer", 3.0, 3.0)  # fixed integer
    ir.add_variable(VarKey("c", (1,)), "continuous", -1.0, np.inf)
    ir.add_objective_term(VarKey("c", (1,)), 1.0)
    ir.add_row("r1", "NA", [(VarKey("c", (1,)), 1.0), (VarKey("n", (1,)), 1.0)], ">=", 2.0)
    ir.freeze()
    path = tmp_path / "fixed.mps"
    write_mps(ir, path)
    again = read_mps(path)
    assert list(again.kinds) == ["binary", "integer", "continuous"]
    assert list(again.lb) == [0.0, 3.0, -1.0]
    assert again.ub[0] == 0.0 and again.ub[1] == 3.0 and not np.isfinite(again.ub[2])


def test_export_model_validates_format(tmp_path, loss_model):
    with pytest.raises(ValueError):
        export_model(loss_model, "xlsx", tmp_path / "m.xlsx")


def test_lp_bounds_sections(tmp_path, loss_model):
    text = (tmp_path / "m.lp")
    write_lp(loss_model, text)
    content = text.read_text()
    assert content.startswith("\\")
    for section in ("Minimize", "Subject To", "Bounds", "Binaries", "Generals", "End"):
        assert section in content
    # quadratic row rendered in bracket form
    assert "[" in content and "^ 2" in content


def test_mps_sections(tmp_path, loss_model):
    path = tmp_path / "m.mps"
    write_mps(loss_model, path)
    content = path.read_text()
    for section in ("NAME", "ROWS", "COLUMNS", "RHS", "BOUNDS", "QCMATRIX", "ENDATA"):
        assert section in content
    assert "'MARKER'" in content and "'INTORG'" in content
