import pytest

from dualkm.config import LAMBDA_GRID, RunConfig, dump_config, load_config, parse_config


def test_defaults():
    cfg = RunConfig()
    assert cfg.effective_block_size == 512
    assert RunConfig(loss="logistic").effective_block_size == 1024
    assert RunConfig(block_size=64).effective_block_size == 64
    tr = cfg.trust_region()
    assert (tr.delta_max, tr.eta, tr.tol, tr.max_tr_iter, tr.max_cg_iter) == (1.0, 0.1, 1e-5, 50, 10)
    assert LAMBDA_GRID[0] == 2.0**-7 and LAMBDA_GRID[-1] == 2.0**7 and len(LAMBDA_GRID) == 15


@pytest.mark.parametrize(
    "kw",
    [
        {"loss": "nope"},
        {"lam": 0.0},
        {"mode": "fast"},
        {"kernel": "poly"},
        {"sigma": -1.0},
        {"sigma": "auto"},
        {"precision": "half"},
        {"primal_eval": "sometimes"},
        {"eta": 0.5},
        {"loss": "lp", "p": 1.0},
        {"n_iter": -1},
    ],
)
def test_invalid_values(kw):
    with pytest.raises(ValueError):
        RunConfig(**kw)


def test_parse_and_round_trip(tmp_path):
    text = "# example\nloss = huber\ndelta = 0.5\nsigma = median\nblock_size = none\nliteral_box_break = yes\nn-iter = 7\n"
    values = parse_config(text)
    assert values == {
        "loss": "huber",
        "delta": 0.5,
        "sigma": "median",
        "block_size": None,
        "literal_box_break": True,
        "n_iter": 7,
    }
    cfg = RunConfig(**values)
    path = tmp_path / "c.cfg"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg
    assert load_config(path, lam=4.0, loss=None).lam == 4.0


def test_parse_errors():
    with pytest.raises(ValueError, match="line 2"):
        parse_config("loss = square\nbogus\n")
    with pytest.raises(ValueError, match="unknown config key"):
        parse_config("colour = red\n")
    with pytest.raises(ValueError):
        parse_config("normalize = maybe\n")
    with pytest.raises(ValueError):
        parse_config("lam =\n")
