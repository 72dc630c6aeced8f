import numpy as np
import pytest

from jstar.model import JstarModel, ModelConfig


def tiny_config(**overrides) -> ModelConfig:
    base = dict(input_dim=3, vocab_size=5, time_reduction=1, fast_layers=2, slow_layers=1,
                hidden_dim=8, ffn_dim=16, heads=2, chunk_fast=2, chunk_slow=3, left_context=2,
                right_context=1, predictor_dim=8, joiner_dim=8, dropout=0.0)
    base.update(overrides)
    return ModelConfig.desk(**base)


def random_batch(rng, n=3, T=6, D=3, V=5, U_max=3):
    feats = [rng.normal(size=(int(rng.integers(2, T + 1)), D)) for _ in range(n)]
    asr = [rng.integers(1, V, size=int(rng.integers(0, U_max + 1))).tolist() for _ in range(n)]
    st = [rng.integers(1, V, size=int(rng.integers(0, U_max + 1))).tolist() for _ in range(n)]
    return feats, asr, st


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model():
    return JstarModel(tiny_config(), seed=0).eval()


# ------------------------------------------------------- acceptance summary

N_CRITERIA = 11
_criteria: dict[int, list[tuple[bool, str]]] = {}


@pytest.fixture
def criterion():
    """``criterion(n, passed, detail)`` records one part of acceptance
    criterion ``n``; a criterion passes when all its parts pass."""
    def record(n: int, passed: bool, detail: str) -> None:
        _criteria.setdefault(n, []).append((bool(passed), detail))
        print(f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        parts = _criteria.get(n)
        if not parts:
            terminalreporter.write_line(f"criterion {n:2d}: FAIL  not recorded (test errored or was deselected)")
            continue
        ok = all(p for p, _ in parts)
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
