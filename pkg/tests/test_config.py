import numpy as np
import pytest

from causticlens import config
from causticlens.errors import ConfigurationError

GOOD = """
# a comment
[run]
target = t.pgm
seed = 3

[pipeline]
coarsest = 16
levels = 3
use_ot = no

[scene]
light_direction = 0, 0.1, 1
focal_length = auto

[energy]
lambda2 = 0      ; ablation
eps1 = none

[solver]
render_iters = 40
"""


def test_parse_good(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text(GOOD)
    rc = config.load(str(p))
    c = rc.pipeline
    assert c.coarsest == 16 and c.levels == 3 and c.use_ot is False
    assert c.light_direction == (0.0, 0.1, 1.0) and c.focal_length is None
    assert c.energy.lambda2 == 0.0 and c.render_opts.max_iters == 40 and c.seed == 3
    assert rc.target == str(tmp_path / "t.pgm")


@pytest.mark.parametrize("text,line,what", [
    ("[run]\n[bogus]\n", 2, "unknown section"),
    ("[run]\nfoo = 1\n", 2, "unknown key"),
    ("[pipeline]\ncoarsest = 8\n\ncoarsest = 9\n", 4, "duplicate key"),
    ("[pipeline]\ncoarsest = many\n", 2, "bad value"),
    ("coarsest = 8\n", 1, "outside any section"),
    ("[pipeline\n", 1, "malformed"),
    ("[pipeline]\njust words\n", 2, "expected"),
    ("[scene]\nmode = bounce\n", 2, "bad value"),
])
def test_parse_errors_name_the_line(text, line, what):
    with pytest.raises(ConfigurationError) as ei:
        config.parse_text(text, "cfg.ini")
    msg = str(ei.value)
    assert msg.startswith(f"cfg.ini:{line}:") and what in msg


def test_overrides():
    assert config.parse_override("energy.lambda4", "0") == ("energy", "lambda4", 0.0)
    assert config.parse_override("alternations", "2") == ("pipeline", "alternations", 2)
    with pytest.raises(ConfigurationError):
        config.parse_override("nothing", "1")
    with pytest.raises(ConfigurationError):
        config.parse_override("coarsest", "x")
    rc = config.load(None, [("pipeline", "alternations", 2), ("energy", "lambda4", 0.0)])
    assert rc.pipeline.alternations == 2 and rc.pipeline.energy.lambda4 == 0.0


def test_invalid_values_rejected():
    with pytest.raises(ConfigurationError):
        config.build({"pipeline": {"coarsest": 2}})
    with pytest.raises(ConfigurationError):
        config.build({"scene": {"eta": -1.0}})
    with pytest.raises(ConfigurationError):
        config.load("/nonexistent/file.ini")


def test_every_schema_key_builds():
    # defaults for all keys are accepted by the builders
    rc = config.build({})
    assert np.isclose(rc.pipeline.eta, 1.49) and rc.obj_thickness == 1.0
