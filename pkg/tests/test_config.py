import json

import numpy as np
import pytest

from rbsde_lab.config import ConfigError, load_config, parse_config
from rbsde_lab.generators import A2

BASE = {
    "schema_version": 1,
    "label": "base",
    "T": 1.0,
    "N": 8,
    "terminal": {"name": "tanh", "params": {"amp": 0.5}},
    "generator": {"name": "fmono", "params": {"c0": 0.1}},
}


def cfg(**over):
    return parse_config({**BASE, **over})


def test_defaults_filled():
    c = cfg()
    assert c.data["barrier"] == {"constant": -1e9}
    assert c.data["generator"]["params"] == {"c0": 0.1, "beta": 1.0}
    assert c.tolerances["identity"] == 1e-10
    assert c.output["n_paths"] == 5
    sc = c.build()
    assert sc.lattice.N == 8
    np.testing.assert_allclose(sc.terminal_values(), 0.5 * np.tanh(sc.lattice.states(8)))


@pytest.mark.parametrize(
    "raw,path",
    [
        ({k: v for k, v in BASE.items() if k != "generator"}, "generator"),
        ({**BASE, "generator": {"name": "fcubic"}}, "generator.name"),
        ({**BASE, "generator": {"name": "fmono", "params": {"gamma": 1}}}, "generator.params.gamma"),
        ({**BASE, "generator": {"name": "fdrift"}}, "generator.params.mu"),
        ({**BASE, "N": 0}, "N"),
        ({**BASE, "N": 2.5}, "N"),
        ({**BASE, "T": "one"}, "T"),
        ({**BASE, "extra": 1}, "extra"),
        ({**BASE, "schema_version": 2}, "schema_version"),
        ({**BASE, "terminal": {"name": "clamped_linear", "params": {"lo": 0}}}, "terminal.params.hi"),
        ({**BASE, "barrier": {"level": 0}}, "barrier"),
        ({**BASE, "transforms": [{"kind": "truncate"}]}, "transforms[0].C"),
        ({**BASE, "transforms": [{"kind": "spin"}]}, "transforms[0].kind"),
        ({**BASE, "scheme": {"y_evaluation": "sideways"}}, "scheme"),
        ({**BASE, "tolerances": {"identity": -1}}, "tolerances.identity"),
        ({**BASE, "generator": {"name": "f0", "metadata": {"assumption_class": "A9-none"}}}, "generator.metadata.assumption_class"),
    ],
)
def test_errors_carry_field_path(raw, path):
    with pytest.raises(ConfigError) as exc:
        parse_config(raw)
    assert exc.value.path == path
    assert str(exc.value).startswith(f"{path}:")


def test_json_syntax_error_has_line_and_column(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "T": 1.0,\n  "N": 8,,\n}')
    with pytest.raises(ConfigError, match=r"line 3, column 10"):
        load_config(p)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.json")


def test_hash_tracks_semantics_only():
    h = cfg().hash()
    assert cfg(label="renamed").hash() == h
    assert cfg(output={"n_paths": 50}).hash() == h
    assert cfg(N=9).hash() != h
    assert cfg(tolerances={"identity": 1e-9}).hash() != h
    assert cfg(generator={"name": "fmono", "params": {"c0": 0.1, "beta": 1.0}}).hash() == h  # defaults made explicit


def test_load_round_trip(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(BASE))
    assert load_config(p).hash() == cfg().hash()


def test_metadata_override():
    c = cfg(generator={"name": "f0", "metadata": {"assumption_class": A2, "mu": 0.5, "phi": {"offset": 1.0, "coeff": 2.0}}})
    g = c.build().generator
    assert g.assumption_class == A2 and g.mu == 0.5
    assert g.phi(3.0) == pytest.approx(7.0)


def test_transforms_apply():
    plain = cfg(generator={"name": "fquad"}).build()
    tr = cfg(generator={"name": "fquad"}, transforms=[{"kind": "truncate", "C": 1.0}]).build()
    z = np.array([0.5, 3.0])
    np.testing.assert_allclose(plain.generator(0.0, 0.0, z), [0.25, 9.0])
    # the cutoff acts on y: far outside [-2C, 2C] the coefficient vanishes
    np.testing.assert_allclose(tr.generator(0.0, 0.0, z), plain.generator(0.0, 0.0, z))
    assert np.all(tr.generator(0.0, 5.0, z) == 0.0)
    shifted = cfg(transforms=[{"kind": "monotone_shift", "lambda": 0.5}]).build()
    assert not np.allclose(shifted.terminal_values(), plain.terminal_values())


def test_transform_failure_names_position():
    with pytest.raises(ConfigError, match=r"^transforms\[0\]"):
        cfg(transforms=[{"kind": "lipschitz", "n": 0.5}]).build()


def test_function_barrier():
    c = cfg(barrier={"function": {"name": "linear", "params": {"a": 0.0, "c": -0.4}}, "time_coeff": 0.1})
    L = c.build().barrier
    assert L[0][0] == pytest.approx(-0.4)
    assert L[8][0] == pytest.approx(-0.3)


def test_shipped_scenarios_parse():
    from pathlib import Path

    files = sorted((Path(__file__).parent.parent / "scenarios").glob("*.json"))
    assert files
    for f in files:
        load_config(f).build().check()
