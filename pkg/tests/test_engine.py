import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from realuid import engine, oracle
from realuid.data import CouplingSampler, DataSampler
from realuid.diffcore import Generator, Mlp
from realuid.engine import (DistillConfig, Distiller, EvalConfig, NetConfig, TeacherConfig, TrainingAborted,
                            is_generator_step, param_hash, sample_generator, sample_teacher_ode)
from realuid.losses import CoefficientError, Coeffs
from realuid.paths import PathSpec

SMALL = NetConfig(hidden=(16, 16), time_freqs=2)


def tiny_teacher(dim=1, cond_dim=0, seed=0):
    t = Mlp(dim, (16, 16), time_freqs=2, cond_dim=cond_dim, rng=np.random.default_rng(seed))
    for p in t.parameters():
        p.requires_grad = False
    return t


def cfg(**kw):
    base = dict(mode="real_uid", coeffs=Coeffs(0.94, 0.96), n_iters=20, batch_size=32, lr_fake=1e-3,
                lr_gen=1e-3, warmup_steps=0, net=SMALL, eval=EvalConfig(interval=0, n_samples=200, n_ref=200))
    base.update(kw)
    return DistillConfig(**base)


gauss = DataSampler("gauss1d", mu=0.0)


# ---------------------------------------------------------------- config validation

def test_config_rejections():
    with pytest.raises(CoefficientError):
        cfg(mode="uid")  # data-free mode needs alpha = beta = 1
    with pytest.raises(CoefficientError, match="collapse"):
        cfg(mode="dmd_real", coeffs=Coeffs(0.9, 0.8), path=PathSpec("diffusion_vp"))
    with pytest.raises(CoefficientError):
        cfg(mode="dmd_real", coeffs=Coeffs(0.9, 0.9))
    with pytest.raises(CoefficientError):
        cfg(mode="coupling")
    with pytest.raises(CoefficientError):
        cfg(mode="consistency")
    with pytest.raises(ValueError):
        cfg(k_fake_steps=0)
    with pytest.raises(ValueError):
        cfg(alternation="sometimes")
    cfg(mode="dmd_real", coeffs=Coeffs(0.9, 0.9), path=PathSpec("diffusion_vp"))


def test_zero_width_net_rejected():
    with pytest.raises(ValueError):
        engine.train_teacher(PathSpec(), gauss, TeacherConfig(n_iters=1, net=NetConfig(hidden=(0,))))


# ---------------------------------------------------------------- alternation

@given(k=st.integers(1, 8), n=st.integers(0, 10 ** 6))
def test_schedule_counts(k, n):
    win = [is_generator_step(m, k, "ratio") for m in range(n, n + k + 1)]
    assert sum(win) == 1
    assert is_generator_step(n, k) == (n % k == 0)


@pytest.mark.parametrize("alternation", ["pseudocode", "ratio"])
def test_alternation_by_parameter_hashes(alternation):
    k = 3
    d = Distiller(tiny_teacher(), cfg(k_fake_steps=k, alternation=alternation), real_sampler=gauss)
    kinds = []
    for _ in range(4 * (k + 1)):
        g0, f0 = param_hash(d.gen.net), param_hash(d.fake)
        d.step()
        g_changed, f_changed = param_hash(d.gen.net) != g0, param_hash(d.fake) != f0
        assert g_changed != f_changed
        kinds.append("g" if g_changed else "f")
    for n, kind in enumerate(kinds):
        assert (kind == "g") == is_generator_step(n, k, alternation)
    if alternation == "ratio":
        for s in range(len(kinds) - k):
            assert kinds[s:s + k + 1].count("g") == 1


def test_teacher_is_immutable():
    teacher = tiny_teacher()
    h = param_hash(teacher)
    res = engine.distill(teacher, cfg(n_iters=15), gauss)
    assert res.status == "ok" and param_hash(teacher) == h


def test_shared_time_and_noise_between_triples():
    d = Distiller(tiny_teacher(), cfg(path=PathSpec("interpolant")), real_sampler=gauss)
    b = d._batch(live=False, with_real=True)
    np.testing.assert_array_equal(b.gen.t, b.real.t)
    np.testing.assert_array_equal(b.gen.endpoint, b.real.endpoint)
    np.testing.assert_array_equal(b.gen.eps, b.real.eps)


def test_data_free_mode_never_draws_real_data():
    def boom(n, rng):
        raise AssertionError("real data requested")

    res = engine.distill(tiny_teacher(), cfg(mode="uid", coeffs=Coeffs(1.0, 1.0), n_iters=10), boom,
                         ref_samples=np.zeros((10, 1)))
    assert res.status == "ok"


# ---------------------------------------------------------------- determinism

def _records(seed):
    c = cfg(n_iters=20, seed=seed, eval=EvalConfig(interval=10, n_samples=100, n_ref=100))
    res = engine.distill(tiny_teacher(), c, gauss)
    return [dict(r.__dict__, wall_ms=0.0) for r in res.records]


def test_seed_determinism():
    a, b = _records(5), _records(5)
    assert a == b and len(a) == 2
    assert _records(6) != a


@pytest.mark.parametrize("mode,extra", [
    ("sid", dict(coeffs=Coeffs(0.94, 0.96, alpha_sid=1.2))),
    ("general", dict(coeffs=Coeffs(0.94, 0.96, gamma=0.9))),
    ("normalized", {}),
    ("gan_baseline", dict(coeffs=Coeffs(0.94, 0.96, lambda_adv_g=0.3, lambda_adv_d=1.0))),
    ("dmd_real", dict(coeffs=Coeffs(0.9, 0.9), path=PathSpec("diffusion_vp"))),
])
def test_every_mode_runs_and_logs(mode, extra):
    c = cfg(mode=mode, n_iters=12, eval=EvalConfig(interval=6, n_samples=100, n_ref=100), **extra)
    res = engine.distill(tiny_teacher(), c, gauss)
    assert res.status == "ok" and len(res.records) == 2
    assert all(np.isfinite(v) for r in res.records for v in r.losses.values())


def test_real_uid_logs_both_terms():
    c = cfg(n_iters=12, eval=EvalConfig(interval=12, n_samples=100, n_ref=100))
    (rec,) = engine.distill(tiny_teacher(), c, gauss).records
    assert {"loss.gen_term", "loss.real_term", "loss.generator"} <= set(rec.losses)
    assert rec.losses["loss.real_term"] != 0.0


# ---------------------------------------------------------------- NaN policy

def test_three_consecutive_nans_abort():
    nan = lambda n, rng: np.full((n, 1), np.nan)  # noqa: E731
    res = engine.distill(tiny_teacher(), cfg(n_iters=50), nan, ref_samples=np.zeros((10, 1)))
    # step 0 is a generator step (no real data); steps 1..3 are fake steps on NaN data
    assert res.status == "aborted" and res.skipped == 3


def test_isolated_nan_is_skipped():
    calls = {"n": 0}

    def flaky(n, rng):
        calls["n"] += 1
        x = rng.standard_normal((n, 1))
        return np.full_like(x, np.nan) if calls["n"] == 3 else x

    res = engine.distill(tiny_teacher(), cfg(n_iters=20), flaky)
    assert res.status == "ok" and res.skipped == 1


def test_teacher_nan_aborts_with_last_good_params():
    calls = {"n": 0}

    def flaky(n, rng):
        calls["n"] += 1
        x = rng.standard_normal((n, 1))
        return np.full_like(x, np.nan) if calls["n"] > 12 else x

    tc = TeacherConfig(n_iters=40, batch_size=16, net=SMALL, log_interval=5)
    with pytest.raises(TrainingAborted):
        engine.train_teacher(PathSpec(), flaky, tc, dim=1)


# ---------------------------------------------------------------- finetune

def test_finetune_starts_fake_from_teacher():
    teacher = tiny_teacher()
    gen = Generator(Mlp(1, (16, 16), time_freqs=2, zero_last=True))
    # step 0 is a generator step, so after one iteration the fake is untouched
    res = engine.finetune(teacher, gen, cfg(n_iters=1), 0.94, 1.0, gauss)
    np.testing.assert_array_equal(res.fake.get_flat(), teacher.get_flat())
    assert res.status == "ok"


def test_finetune_reports_divergence():
    nan = lambda n, rng: np.full((n, 1), np.nan)  # noqa: E731
    gen = Generator(Mlp(1, (16, 16), time_freqs=2, zero_last=True))
    res = engine.finetune(tiny_teacher(), gen, cfg(n_iters=20), 0.9, 1.0, nan, ref_samples=np.zeros((5, 1)))
    assert res.status == "diverged"


# ---------------------------------------------------------------- samplers

def test_residual_zero_net_returns_latents():
    gen = Generator(Mlp(2, (8,), zero_last=True))
    out = sample_generator(gen, 1000, np.random.default_rng(1))
    np.testing.assert_array_equal(out, np.random.default_rng(1).standard_normal((1000, 2)))


def test_sample_generator_uses_ema_weights():
    gen = Generator(Mlp(1, (8,), zero_last=True))
    ema = engine.EmaState.of(gen.net.get_flat(), 0.9)
    live = gen.net.get_flat()
    gen.net.set_flat(live + 1.0)
    a = sample_generator(gen, 10, np.random.default_rng(0), ema=ema)
    np.testing.assert_array_equal(a, np.random.default_rng(0).standard_normal((10, 1)))
    np.testing.assert_array_equal(gen.net.get_flat(), live + 1.0)


def test_teacher_ode_mean_within_clt_bound():
    mu, n = 2.0, 20000
    x = sample_teacher_ode(oracle.GaussianField(mu), 100, n, np.random.default_rng(2), dim=1)
    assert abs(x.mean() - mu) <= 3 * x.std() / np.sqrt(n)


def test_teacher_ode_rejects_score_paths_and_zero_steps():
    with pytest.raises(ValueError):
        sample_teacher_ode(oracle.GaussianField(0.0), 0, 10, np.random.default_rng(0), dim=1)
    with pytest.raises(ValueError):
        sample_teacher_ode(oracle.GaussianField(0.0), 10, 10, np.random.default_rng(0), dim=1,
                           path=PathSpec("diffusion_vp"))


def test_large_sample_is_fast():
    import time

    gen = Generator(Mlp(2, (128, 128, 128)))
    t0 = time.perf_counter()
    out = sample_generator(gen, 50000, np.random.default_rng(0))
    assert out.shape == (50000, 2) and time.perf_counter() - t0 < 10


# ---------------------------------------------------------------- coupling

def test_coupling_rejects_unconditional_generator():
    teacher = tiny_teacher(cond_dim=1)
    c = cfg(mode="coupling", path=PathSpec("bridge_brownian"))
    with pytest.raises(CoefficientError):
        engine.distill_coupling(teacher, c, CouplingSampler("translation"),
                                generator=Generator(Mlp(1, (8,), zero_last=True)))
    with pytest.raises(CoefficientError):
        engine.distill_coupling(tiny_teacher(), c, CouplingSampler("translation"))


def test_coupling_runs_conditioned_on_endpoint():
    teacher = tiny_teacher(cond_dim=1)
    c = cfg(mode="coupling", path=PathSpec("bridge_brownian"), n_iters=10,
            eval=EvalConfig(interval=10, n_samples=100, n_ref=100))
    res = engine.distill_coupling(teacher, c, CouplingSampler("translation"))
    assert res.status == "ok" and res.generator.conditional and res.records[0].sliced_w2 is not None


# ---------------------------------------------------------------- run directories

def test_csv_roundtrip_is_exact(tmp_path):
    x = np.random.default_rng(0).standard_normal((50, 2)) * 1e-7
    engine.write_csv(tmp_path / "s.csv", x)
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "x1,x2"
    np.testing.assert_array_equal(engine.read_csv(tmp_path / "s.csv"), x)


def test_run_dir_layout(tmp_path):
    rd = engine.RunDir(tmp_path / "r")
    rd.write_config({"a": 1})
    rd.append_metrics(engine.evalkit.MetricsRecord(1))
    rd.write_samples("gen", np.zeros((3, 1)))
    assert (tmp_path / "r" / "checkpoints").is_dir()
    assert rd.read_config() == {"a": 1}
    assert (tmp_path / "r" / "samples" / "gen.csv").exists() and rd.metrics_path.exists()
