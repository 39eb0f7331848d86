import numpy as np
import pytest

from codriver.datagen import (
    PolicyGenSpec,
    collect_dataset,
    default_x0_pool,
    gen_leader_policies,
)
from codriver.game import composite_utility, solve_fse
from codriver.gridworld import (
    DRIVER_PRESETS,
    DecisionSchedule,
    Scenario,
    successor_table,
    utility_table,
)
from codriver import learning as ln
from oracles import fd_grad, fd_jacobian

MICRO = Scenario(P=3, L=1, V=2, obstacles=(), goal=(2, 0, 0), goal_reward=5.0,
                 T=2, sigma=DecisionSchedule((1, 0)), rationality=10.0,
                 gamma=1.0, max_episode_steps=10)
LN6 = np.log(6.0)


def rand_pairs(rng, count, t=0, sid=0):
    return [ln.StrategyPair(t, sid, rng.dirichlet(np.ones(6)),
                            int(rng.integers(6)))
            for _ in range(count)]


def micro_data(type_id=1, n=20, seed=0, mode="dirichlet_random", count=3):
    spec = PolicyGenSpec(mode=mode, count=count, seed=seed)
    pols = gen_leader_policies(spec, MICRO)
    return collect_dataset(DRIVER_PRESETS[type_id], pols, n,
                           default_x0_pool(MICRO), MICRO, seed=seed + 7,
                           type_id=type_id)


def rel_err(got, want):
    return np.max(np.abs(got - want)) / max(1e-12, np.max(np.abs(want)))


class TestCeLossAndGrad:
    def test_zero_table_gives_uniform_prediction(self):
        pairs = [ln.StrategyPair(0, 0, np.full(6, 1 / 6), 3)]
        loss, grad = ln.ce_loss_and_grad(np.zeros((6, 6)), pairs, 10.0)
        assert abs(loss - LN6) < 1e-12
        assert grad.shape == (6, 6)

    def test_aligned_pair_loss_vanishes(self):
        gt = np.zeros((6, 6))
        gt[2, 3] = 10.0
        yl = np.zeros(6)
        yl[2] = 1.0
        loss, _ = ln.ce_loss_and_grad(gt, [ln.StrategyPair(0, 0, yl, 3)], 10.0)
        # scores are 100 on the chosen action and 0 elsewhere
        assert 0 <= loss < 1e-6

    def test_empty_pairs_are_a_defined_zero(self):
        loss, grad = ln.ce_loss_and_grad(np.ones((6, 6)), [], 10.0)
        assert loss == 0.0
        assert not grad.any()

    def test_loss_matches_direct_softmax_formula(self):
        rng = np.random.default_rng(5)
        gt = rng.standard_normal((6, 6))
        pairs = rand_pairs(rng, 7)
        loss, _ = ln.ce_loss_and_grad(gt, pairs, 10.0)
        per = []
        for p in pairs:
            z = np.exp(10.0 * (p.yL @ gt))
            per.append(-np.log(z[p.uF] / z.sum()))
        assert np.isclose(loss, np.mean(per), atol=1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_grad_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        gt = rng.standard_normal((6, 6))
        pairs = rand_pairs(rng, 1 + int(rng.integers(8)))
        lam = float(rng.choice([1.0, 10.0]))
        _, grad = ln.ce_loss_and_grad(gt, pairs, lam)
        fd = fd_grad(lambda v: ln.ce_loss_and_grad(v.reshape(6, 6), pairs,
                                                   lam)[0], gt.ravel())
        assert rel_err(grad.ravel(), fd) < 1e-5

    def test_shuffling_pairs_changes_nothing(self):
        rng = np.random.default_rng(11)
        gt = rng.standard_normal((6, 6))
        pairs = rand_pairs(rng, 9)
        loss_a, grad_a = ln.ce_loss_and_grad(gt, pairs, 10.0)
        shuffled = [pairs[i] for i in rng.permutation(len(pairs))]
        loss_b, grad_b = ln.ce_loss_and_grad(gt, shuffled, 10.0)
        assert loss_a == loss_b
        assert np.array_equal(grad_a, grad_b)


class TestCeHessian:
    @pytest.mark.parametrize("seed", range(10))
    def test_symmetric(self, seed):
        rng = np.random.default_rng(seed)
        H = ln.ce_hessian(rng.standard_normal((6, 6)), rand_pairs(rng, 5), 10.0)
        assert H.shape == (36, 36)
        assert np.max(np.abs(H - H.T)) <= 1e-9

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_fd_of_analytic_grad(self, seed):
        rng = np.random.default_rng(100 + seed)
        gt = rng.standard_normal((6, 6))
        pairs = rand_pairs(rng, 4)
        H = ln.ce_hessian(gt, pairs, 10.0)
        J = fd_jacobian(lambda v: ln.ce_loss_and_grad(v.reshape(6, 6), pairs,
                                                      10.0)[1].ravel(),
                        gt.ravel())
        assert np.max(np.abs(H - J)) < 1e-4

    def test_vanishes_as_rationality_goes_to_zero(self):
        rng = np.random.default_rng(3)
        H = ln.ce_hessian(rng.standard_normal((6, 6)), rand_pairs(rng, 6),
                          1e-6)
        assert np.max(np.abs(H)) < 1e-8

    def test_empty_pairs_zero(self):
        assert not ln.ce_hessian(np.zeros((6, 6)), [], 10.0).any()

    def test_uniform_point_closed_form(self):
        # at the zero table every reply is uniform, so the per-pair curvature
        # is lam^2 * kron(yL yL^T, I/6 - 1/36)
        rng = np.random.default_rng(9)
        yl = rng.dirichlet(np.ones(6))
        pair = ln.StrategyPair(0, 0, yl, 2)
        cov = np.eye(6) / 6 - np.full((6, 6), 1 / 36)
        want = 100.0 * np.kron(np.outer(yl, yl), cov)
        H = ln.ce_hessian(np.zeros((6, 6)), [pair], 10.0)
        assert np.allclose(H, want, atol=1e-12)


class TestInnerAdapt:
    def test_empty_pairs_identity(self):
        gt = np.arange(36.0).reshape(6, 6)
        assert np.array_equal(ln.inner_adapt(gt, [], 0.01, 10.0), gt)

    def test_zero_step_identity(self):
        rng = np.random.default_rng(0)
        gt = rng.standard_normal((6, 6))
        assert np.array_equal(ln.inner_adapt(gt, rand_pairs(rng, 3), 0.0,
                                             10.0), gt)

    def test_single_pair_step_against_fd(self):
        rng = np.random.default_rng(4)
        pair = rand_pairs(rng, 1)
        fd = fd_grad(lambda v: ln.ce_loss_and_grad(v.reshape(6, 6), pair,
                                                   10.0)[0], np.zeros(36))
        got = ln.inner_adapt(np.zeros((6, 6)), pair, 0.01, 10.0)
        assert np.allclose(got, -0.01 * fd.reshape(6, 6), atol=1e-8)


class TestMetaTaskUpdate:
    def test_zero_meta_step_identity(self):
        rng = np.random.default_rng(1)
        gt = rng.standard_normal((6, 6))
        batch = [(1, rand_pairs(rng, 3), rand_pairs(rng, 2))]
        assert np.array_equal(ln.meta_task_update(gt, batch, 0.01, 0.0, 10.0),
                              gt)

    def test_all_empty_tasks_identity(self):
        gt = np.arange(36.0).reshape(6, 6)
        out = ln.meta_task_update(gt, [(1, [], []), (2, [], [])], 0.01, 0.04,
                                  10.0)
        assert np.array_equal(out, gt)

    def test_matches_fd_of_composed_objective(self):
        # the update must be an exact gradient step on
        # L(g - alpha*grad L(g; train); test) as a function of g
        rng = np.random.default_rng(2)
        gt = rng.standard_normal((6, 6))
        train = rand_pairs(rng, 1)
        test = rand_pairs(rng, 1)
        alpha, beta, lam = 0.05, 0.7, 10.0

        def composed(v):
            inner = ln.inner_adapt(v.reshape(6, 6), train, alpha, lam)
            return ln.ce_loss_and_grad(inner, test, lam)[0]

        want = gt - beta * fd_grad(composed, gt.ravel()).reshape(6, 6)
        got = ln.meta_task_update(gt, [(1, train, test)], alpha, beta, lam)
        assert np.allclose(got, want, atol=1e-6)

    def test_empty_test_falls_back_to_train(self):
        rng = np.random.default_rng(6)
        gt = rng.standard_normal((6, 6))
        train = rand_pairs(rng, 4)
        a = ln.meta_task_update(gt, [(1, train, [])], 0.01, 0.04, 10.0)
        b = ln.meta_task_update(gt, [(1, train, list(train))], 0.01, 0.04,
                                10.0)
        assert np.array_equal(a, b)

    def test_zero_inner_step_is_plain_averaged_descent(self):
        rng = np.random.default_rng(7)
        gt = rng.standard_normal((6, 6))
        batch = [(1, rand_pairs(rng, 3), rand_pairs(rng, 2)),
                 (2, rand_pairs(rng, 2), rand_pairs(rng, 4))]
        got = ln.meta_task_update(gt, batch, 0.0, 0.04, 10.0)
        mean_grad = np.mean([ln.ce_loss_and_grad(gt, te, 10.0)[1]
                             for _, _, te in batch], axis=0)
        assert np.allclose(got, gt - 0.04 * mean_grad, atol=1e-12)

    def test_first_order_mode_drops_curvature_factor(self):
        rng = np.random.default_rng(8)
        gt = rng.standard_normal((6, 6))
        train, test = rand_pairs(rng, 3), rand_pairs(rng, 2)
        got = ln.meta_task_update(gt, [(1, train, test)], 0.05, 0.04, 10.0,
                                  first_order=True)
        inner = ln.inner_adapt(gt, train, 0.05, 10.0)
        _, g_out = ln.ce_loss_and_grad(inner, test, 10.0)
        assert np.allclose(got, gt - 0.04 * g_out, atol=1e-12)


class TestRecoverAndMerge:
    def test_zero_next_values_round_trip(self):
        rng = np.random.default_rng(0)
        gt = rng.standard_normal((6, 6))
        out = ln.recover_g_from_composite(gt, np.zeros(MICRO.n_states), 2,
                                          MICRO)
        assert np.allclose(out, gt, atol=0)

    def test_compose_then_recover_is_identity(self):
        rng = np.random.default_rng(1)
        g_tab = rng.standard_normal((MICRO.n_states, 6, 6))
        vnext = rng.standard_normal(MICRO.n_states)
        comp = composite_utility(g_tab, vnext, MICRO)
        for sid in range(MICRO.n_states):
            rec = ln.recover_g_from_composite(comp[sid], vnext, sid, MICRO)
            assert np.allclose(rec, g_tab[sid], atol=1e-12)

    def test_pair_count_weighted_merge(self):
        g = np.zeros((4, 6, 6))
        counts = np.zeros(4, dtype=np.int64)
        first = np.full((6, 6), 3.0)
        second = np.full((6, 6), 9.0)
        ln.merge_block(g, counts, 2, first, 10)
        assert np.array_equal(g[2], first)
        ln.merge_block(g, counts, 2, second, 5)
        assert counts[2] == 15
        assert np.allclose(g[2], (10 * 3.0 + 5 * 9.0) / 15)


class TestNormalizedLoss:
    def test_zero_estimate_without_terminal_reward_is_ln6(self):
        # with no terminal payoff a zero table induces constant continuation
        # values, so every predicted reply is uniform
        scn = Scenario(P=3, L=1, V=2, obstacles=(), goal=(2, 0, 0),
                       goal_reward=0.0, T=2, sigma=DecisionSchedule((1, 0)),
                       max_episode_steps=10)
        pairs = [ln.StrategyPair(0, scn.encode(0, 0, 0),
                                 np.full(6, 1 / 6), 4),
                 ln.StrategyPair(0, scn.encode(1, 0, 1),
                                 np.eye(6)[2], 0)]
        ds = {1: ln.Dataset(1, [ln.Sample(root=(0, 0, 0), pairs=pairs)])}
        g0 = np.zeros((scn.n_states, 6, 6))
        assert np.isclose(ln.normalized_loss(g0, ds, scn), LN6, atol=1e-12)

    def test_no_decision_data_defined_zero(self):
        ds = {1: ln.Dataset(1, [])}
        assert ln.normalized_loss(np.zeros((MICRO.n_states, 6, 6)), ds,
                                  MICRO) == 0.0

    def test_single_state_filter(self):
        rng = np.random.default_rng(3)
        s1, s2 = MICRO.encode(0, 0, 0), MICRO.encode(1, 0, 1)
        pairs = [ln.StrategyPair(0, s1, rng.dirichlet(np.ones(6)), 1),
                 ln.StrategyPair(0, s2, rng.dirichlet(np.ones(6)), 2)]
        ds = {1: ln.Dataset(1, [ln.Sample(root=(0, 0, 0), pairs=pairs)])}
        g = rng.standard_normal((MICRO.n_states, 6, 6))
        full = ln.normalized_loss(g, ds, MICRO)
        only1 = ln.normalized_loss(g, ds, MICRO, sid=s1)
        only2 = ln.normalized_loss(g, ds, MICRO, sid=s2)
        assert np.isclose(full, (only1 + only2) / 2, atol=1e-12)

    def test_ground_truth_estimate_sits_at_the_response_entropy(self):
        # equilibrium announcements make the recorded replies exact draws
        # from the model's own prediction, so the cross entropy converges to
        # the reply entropy (never 0 for finite rationality)
        g_true = np.asarray(utility_table(MICRO, DRIVER_PRESETS[1]))
        pols = gen_leader_policies(
            PolicyGenSpec(mode="perturbed_dp", count=1, scale=0.0, seed=0),
            MICRO)
        ds = collect_dataset(DRIVER_PRESETS[1], pols, 1000,
                             [(0, 0, 0)], MICRO, seed=1, type_id=1)
        loss = ln.normalized_loss(g_true, {1: ds}, MICRO)
        sol = solve_fse(MICRO, g_true)
        q = sol.follower[0, MICRO.encode(0, 0, 0)]
        floor = -np.sum(q * np.log(q))
        assert loss > 0
        assert abs(loss - floor) < 0.05


class TestRunMetaTraining:
    def test_zero_iterations_returns_zero_init(self):
        ds = {1: micro_data(1, n=20, seed=0)}
        cfg = ln.LearnConfig(max_outer_iters=0, n_train=10, n_test=5, seed=0)
        g, hist = ln.run_meta_training(ds, {1: 1.0}, MICRO, cfg)
        assert not g.any()
        assert hist["overall"].shape == (1,)

    def test_missing_dataset_for_sampled_type_fails(self):
        with pytest.raises(ValueError):
            ln.run_meta_training({}, {1: 1.0}, MICRO, ln.LearnConfig())
        with pytest.raises(ValueError):
            ln.run_meta_training({1: ln.Dataset(1, [])}, {1: 1.0}, MICRO,
                                 ln.LearnConfig())

    def test_deterministic_under_seed(self):
        ds = {1: micro_data(1, n=16, seed=2), 3: micro_data(3, n=16, seed=3)}
        mu = {1: 0.5, 3: 0.5}
        cfg = ln.LearnConfig(max_outer_iters=3, seed=11)
        g1, h1 = ln.run_meta_training(ds, mu, MICRO, cfg)
        g2, h2 = ln.run_meta_training(ds, mu, MICRO, cfg)
        assert np.array_equal(g1, g2)
        assert np.array_equal(h1["overall"], h2["overall"])

    def test_loss_decreases_on_single_type_population(self):
        ds = {2: micro_data(2, n=20, seed=5)}
        cfg = ln.LearnConfig(max_outer_iters=30, seed=1)
        root = MICRO.encode(0, 0, 0)
        g, hist = ln.run_meta_training(ds, {2: 1.0}, MICRO, cfg,
                                       track_states=(root,))
        assert hist["overall"].shape == (31,)
        assert hist[root].shape == (31,)
        assert hist["overall"][-1] < 0.9 * hist["overall"][1]
        assert g.any()

    def test_types_outside_distribution_are_never_sampled(self):
        # type 3 present in the data but weightless: result must match a run
        # without it except through the loss report, which pools all data
        ds = {1: micro_data(1, n=16, seed=2)}
        cfg = ln.LearnConfig(max_outer_iters=2, seed=4)
        g1, _ = ln.run_meta_training(ds, {1: 1.0}, MICRO, cfg)
        ds2 = {1: ds[1], 3: micro_data(3, n=16, seed=3)}
        g2, _ = ln.run_meta_training(ds2, {1: 1.0, 3: 0.0}, MICRO, cfg)
        assert np.array_equal(g1, g2)


class TestAdaptDriver:
    def test_zero_iterations_is_a_copy(self):
        rng = np.random.default_rng(0)
        g_meta = rng.standard_normal((MICRO.n_states, 6, 6))
        ds = micro_data(1, n=8, seed=1)
        cfg = ln.LearnConfig(adapt_iters=0, seed=0)
        out = ln.adapt_driver(g_meta, ds, MICRO, cfg)
        assert np.array_equal(out, g_meta)
        out[0, 0, 0] = 123.0
        assert g_meta[0, 0, 0] != 123.0

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            ln.adapt_driver(np.zeros((MICRO.n_states, 6, 6)),
                            ln.Dataset(1, []), MICRO, ln.LearnConfig())

    def test_deterministic_under_seed(self):
        ds = micro_data(4, n=12, seed=4)
        g_meta = np.zeros((MICRO.n_states, 6, 6))
        cfg = ln.LearnConfig(adapt_iters=5, seed=9)
        a = ln.adapt_driver(g_meta, ds, MICRO, cfg)
        b = ln.adapt_driver(g_meta, ds, MICRO, cfg)
        assert np.array_equal(a, b)

    def test_adaptation_moves_replies_toward_the_true_driver(self):
        # meta table blended from two types; adapting on type-3 data must
        # shrink the average policy gap to the true type-3 replies. Runs on
        # the full road: tiny grids are dominated by exact score ties from
        # speed clamping that no fitted table reproduces.
        scn = Scenario()

        def road_data(tid, seed):
            pols = gen_leader_policies(PolicyGenSpec(count=3, seed=seed), scn)
            return collect_dataset(DRIVER_PRESETS[tid], pols, 16,
                                   default_x0_pool(scn), scn, seed=seed + 7,
                                   type_id=tid)

        ds_pop = {1: road_data(1, 2), 3: road_data(3, 3)}
        cfg = ln.LearnConfig(max_outer_iters=12, seed=5)
        g_meta, _ = ln.run_meta_training(ds_pop, {1: 0.5, 3: 0.5}, scn, cfg)
        target = road_data(3, 8)
        adapted = ln.adapt_driver(g_meta, target, scn,
                                  ln.LearnConfig(adapt_iters=20,
                                                 adapt_sample_size=10, seed=6))
        g_true = np.asarray(utility_table(scn, DRIVER_PRESETS[3]))
        sol_true = solve_fse(scn, g_true)
        cells = sorted({(p.t, p.sid) for s in target.samples for p in s.pairs
                        if scn.sigma[p.t]})

        def gap(table):
            sol = solve_fse(scn, table)
            tv = [0.5 * np.abs(sol.follower[t, x]
                               - sol_true.follower[t, x]).sum()
                  for t, x in cells]
            return float(np.mean(tv))

        assert gap(adapted) < gap(g_meta)


class TestUtilityTableIo:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        table = rng.standard_normal((6, 6, 6))
        path = tmp_path / "table.json"
        ln.save_utility_json(path, table, meta={"iters": 3, "seed": 1})
        back, meta = ln.load_utility_json(path)
        assert np.allclose(back, table, atol=0)
        assert meta == {"iters": 3, "seed": 1}
