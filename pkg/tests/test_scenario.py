import numpy as np
import pytest

from gridmpc.hankel import Sequence
from gridmpc.plant import GridParams, battery_step
from gridmpc.scenario import (
    ExcitationError,
    GeneratorParams,
    IODataset,
    collect_excitation_data,
    generate_profiles,
    lift_input,
    load_dataset_csv,
    load_profile_csv,
    save_dataset_csv,
    save_profile_csv,
)

PARAMS = GridParams()


class TestGenerateProfiles:
    def test_deterministic_in_seed(self):
        a = generate_profiles(seed=1, steps=100)
        b = generate_profiles(seed=1, steps=100)
        np.testing.assert_array_equal(a.w_r, b.w_r)
        np.testing.assert_array_equal(a.w_d, b.w_d)

    def test_signs(self):
        for seed in range(5):
            p = generate_profiles(seed=seed, steps=200)
            assert np.all(p.w_r >= 0)
            assert np.all(p.w_d <= 0)

    def test_feasibility_margin(self):
        # max |w_d| <= p_t_max + p_s_max - margin = 1.9 with Table-1 bounds.
        for seed in range(5):
            p = generate_profiles(seed=seed, steps=500)
            assert np.max(np.abs(p.w_d)) <= 1.9 + 1e-12

    def test_every_step_constructively_balanced(self):
        # delta=1, p_r=0 and splitting the load across p_t and p_s always works.
        p = generate_profiles(seed=3, steps=300)
        for k in range(p.steps):
            load = -p.w_d[k]
            p_t = min(max(load, PARAMS.p_t_min), PARAMS.p_t_max)
            p_s = load - p_t
            assert PARAMS.p_s_min <= p_s <= PARAMS.p_s_max
            assert abs(p_t + p_s - load) < 1e-12

    def test_invalid_gen_params(self):
        with pytest.raises(ValueError):
            GeneratorParams(noise_std=-0.1)
        with pytest.raises(ValueError):
            generate_profiles(seed=0, steps=10, gen_params=GeneratorParams(margin=2.5))
        with pytest.raises(ValueError):
            generate_profiles(seed=0, steps=0)


class TestProfileCsv:
    def test_round_trip(self, tmp_path):
        profile = generate_profiles(seed=2, steps=48)
        path = tmp_path / "profile.csv"
        save_profile_csv(profile, path)
        loaded = load_profile_csv(path)
        assert loaded.steps == 48
        np.testing.assert_allclose(loaded.w_r, profile.w_r, atol=1e-12)
        np.testing.assert_allclose(loaded.w_d, profile.w_d, atol=1e-12)
        # Second save emits identical bytes.
        path2 = tmp_path / "profile2.csv"
        save_profile_csv(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_sign_violation_names_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("step,w_r,w_d\n0,0.5,-0.1\n1,0.5,0.5\n")
        with pytest.raises(ValueError, match="row 1"):
            load_profile_csv(path)

    def test_missing_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("step,w_r\n0,0.5\n")
        with pytest.raises(ValueError, match="columns"):
            load_profile_csv(path)

    def test_non_monotone_step(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("step,w_r,w_d\n0,0.5,-0.1\n2,0.5,-0.1\n")
        with pytest.raises(ValueError, match="step"):
            load_profile_csv(path)


class TestLiftInput:
    @pytest.mark.parametrize("u,expected", [(2.0, (2.0, 4.0)), (0.0, (0.0, 0.0)), (-1.0, (-1.0, 1.0))])
    def test_values(self, u, expected):
        np.testing.assert_array_equal(lift_input(u), expected)


class TestCollectExcitationData:
    def test_reference_collection(self):
        ds = collect_excitation_data(PARAMS, x_start=3.5, seed=7, N=185, margin=0.25, order=11)
        assert ds.N == 185
        from gridmpc.hankel import is_persistently_exciting

        assert is_persistently_exciting(ds.u, 11)
        assert is_persistently_exciting(ds.v, 11)

    def test_chain_consistency(self):
        ds = collect_excitation_data(PARAMS, seed=3, N=60, order=6)
        x = ds.y.samples[0, 0]
        for k in range(ds.N - 1):
            x = battery_step(x, ds.u.samples[k, 0], PARAMS)
            assert abs(x - ds.y.samples[k + 1, 0]) <= 1e-12

    def test_states_stay_inside_margin(self):
        ds = collect_excitation_data(PARAMS, seed=5, N=200, margin=0.25, order=11)
        assert np.all(ds.y.samples >= PARAMS.x_min + 0.25 - 1e-9)
        assert np.all(ds.y.samples <= PARAMS.x_max - 0.25 + 1e-9)

    def test_forced_constant_policy_fails(self):
        with pytest.raises(ExcitationError) as err:
            collect_excitation_data(PARAMS, seed=1, N=40, order=4, forced_inputs=np.zeros(40))
        assert err.value.lifted_rank < 8

    def test_too_short(self):
        with pytest.raises(ValueError, match="too short"):
            collect_excitation_data(PARAMS, seed=1, N=12, order=11)

    def test_deterministic(self):
        a = collect_excitation_data(PARAMS, seed=9, N=80, order=8)
        b = collect_excitation_data(PARAMS, seed=9, N=80, order=8)
        np.testing.assert_array_equal(a.u.samples, b.u.samples)
        np.testing.assert_array_equal(a.y.samples, b.y.samples)


class TestIODataset:
    def test_lift_consistency_enforced(self):
        u = Sequence([0.1, 0.2])
        y = Sequence([3.0, 2.9])
        with pytest.raises(ValueError, match="lifted"):
            IODataset(u=u, y=y, v=Sequence([(0.1, 0.5), (0.2, 0.04)]))

    def test_csv_round_trip(self, tmp_path):
        ds = collect_excitation_data(PARAMS, seed=2, N=50, order=5)
        path = tmp_path / "dataset.csv"
        save_dataset_csv(ds, path)
        loaded = load_dataset_csv(path)
        np.testing.assert_allclose(loaded.u.samples, ds.u.samples, atol=1e-12)
        np.testing.assert_allclose(loaded.y.samples, ds.y.samples, atol=1e-12)
        path2 = tmp_path / "dataset2.csv"
        save_dataset_csv(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()
