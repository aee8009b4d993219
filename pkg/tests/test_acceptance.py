"""Acceptance gate: nine end-to-end criteria, one verdict line each.

Criteria 4-7 share three session-scoped five-seed sweeps (one sweep per
training variant) at the full default configuration, so this file is
the slow part of the suite.  Everything is deterministic in the fixed
seed list; the verdict lines print unbuffered so a watching terminal
sees progress.
"""

import time
from dataclasses import dataclass

import numpy as np
import pytest

from dreamprm import autodiff as ad
from dreamprm.config import ExperimentConfig, resolve
from dreamprm.hypergrad import hypergrad_unrolled, meta_gradient, unroll_window, window_hypergrad
from dreamprm.labeling import (
    apply_dynamic_filter,
    group_by_question,
    label_dataset,
    monte_carlo_label,
)
from dreamprm.params import ParamVector
from dreamprm.pipeline import (
    domain_data_path,
    eval_report_path,
    history_path,
    out_root,
    read_manifest,
    run_pipeline,
)
from dreamprm.prm import PRMConfig, init_params
from dreamprm.selection import (
    candidate_sets_from_domain,
    evaluate,
    oracle_scorer,
    paired_bootstrap_gap,
    report_from_json,
)
from dreamprm.simulator import (
    Completer,
    DomainSpec,
    Question,
    Step,
    clean_variant,
    generate_domain,
    read_domain_jsonl,
    true_correctness_prob,
)
from dreamprm import training as tr
from dreamprm.training import read_history_csv

SEEDS = (0, 1, 2, 3, 4)


def announce(capsys, number, name, ok, detail):
    with capsys.disabled():
        mark = "PASS" if ok else "FAIL"
        print(f"\n[{mark}] criterion {number} ({name}): {detail}", flush=True)


@dataclass
class RunOutput:
    config: object
    report: object
    history: object


def _sweep(variant, tmp_path_factory):
    root = tmp_path_factory.mktemp(f"sweep_{variant}")
    runs = {}
    t0 = time.monotonic()
    for seed in SEEDS:
        config = resolve(
            ExperimentConfig(),
            seed=seed,
            variant=variant,
            out_dir=str(root / f"seed{seed}"),
            env={},
        )
        run_pipeline(config)
        runs[seed] = RunOutput(
            config=config,
            report=report_from_json(eval_report_path(config)),
            history=read_history_csv(
                history_path(config), domain_names=config.domain_names()
            ),
        )
    return runs, time.monotonic() - t0


@pytest.fixture(scope="session")
def dreamprm_runs(tmp_path_factory):
    return _sweep("dreamprm", tmp_path_factory)


@pytest.fixture(scope="session")
def vanilla_runs(tmp_path_factory):
    return _sweep("vanilla", tmp_path_factory)


@pytest.fixture(scope="session")
def no_afl_runs(tmp_path_factory):
    return _sweep("no_afl", tmp_path_factory)


def _wins(report, method, k=8):
    out = []
    for rec in report.per_question:
        if method == "pass1":
            out.append(bool(rec["correct"][0]))
        else:
            out.append(bool(rec["correct"][rec[method][str(k)]]))
    return out


class TestCriterion1Gradients:
    """Reverse-mode gradients vs central differences on random smooth
    compositions; the tanh guard in front of exp keeps values bounded so
    no composition can overflow."""

    _UNARY = (
        lambda a: ad.sigmoid(a),
        lambda a: ad.tanh(a),
        lambda a: ad.exp(ad.mul(ad.tanh(a), 0.5)),
        lambda a: ad.log(ad.add(ad.square(a), 0.5)),
        lambda a: ad.sqrt(ad.add(ad.square(a), 0.5)),
        lambda a: ad.square(a),
    )
    _BINARY = (
        lambda a, b: ad.add(a, b),
        lambda a, b: ad.sub(a, b),
        lambda a, b: ad.mul(a, b),
        lambda a, b: ad.div(a, ad.add(ad.square(b), 1.0)),
    )

    def _build(self, trial, leaf_arrays=None):
        rng = np.random.default_rng(1000 + trial)
        tape = ad.Tape()
        dim = int(rng.integers(2, 6))
        n_leaves = int(rng.integers(2, 4))
        sampled = [rng.uniform(-1.5, 1.5, dim) for _ in range(n_leaves)]
        arrays = sampled if leaf_arrays is None else leaf_arrays
        leaves = [tape.leaf(np.array(a, dtype=float), f"x{i}") for i, a in enumerate(arrays)]
        pool = list(leaves)
        for _ in range(int(rng.integers(4, 9))):
            if rng.random() < 0.45:
                op = self._UNARY[rng.integers(len(self._UNARY))]
                pool.append(op(pool[int(rng.integers(len(pool)))]))
            else:
                op = self._BINARY[rng.integers(len(self._BINARY))]
                a = pool[int(rng.integers(len(pool)))]
                b = pool[int(rng.integers(len(pool)))]
                pool.append(op(a, b))
        return tape, leaves, ad.mean(pool[-1])

    def test_backward_matches_finite_differences(self, capsys):
        t0 = time.monotonic()
        worst = 0.0
        for trial in range(100):
            tape, leaves, out = self._build(trial)
            grads = ad.grad_values(tape, out, leaves)
            flat_grad = np.concatenate([g.ravel() for g in grads])
            pv = ParamVector.from_blocks(
                [(f"x{i}", leaf.value.copy()) for i, leaf in enumerate(leaves)]
            )

            def loss_fn(p, trial=trial):
                arrays = [arr for _, arr in p.block_arrays()]
                _, _, node = self._build(trial, leaf_arrays=arrays)
                return float(node.value)

            fd = ad.finite_difference(loss_fn, pv, eps=1e-5).values
            err = float(np.max(np.abs(flat_grad - fd))) / max(float(np.max(np.abs(fd))), 1.0)
            worst = max(worst, err)
        elapsed = time.monotonic() - t0
        ok = worst < 1e-6 and elapsed < 10.0
        announce(
            capsys, 1, "gradient correctness", ok,
            f"worst relative error {worst:.2e} over 100 compositions, {elapsed:.1f}s (limit 10s)",
        )
        assert worst < 1e-6
        assert elapsed < 10.0


class TestCriterion2Hypergradients:
    def test_closed_form_and_end_to_end(self, capsys):
        t0 = time.monotonic()

        # (a) scalar quadratic with a hand-derived recurrence oracle:
        # inner L = a*(phi-1)^2, meta M = phi^2/2, SGD lr beta
        def engine(a_val, k, beta):
            def inner(tape, leaves, alpha_leaf):
                return ad.sum_(
                    ad.mul(ad.sum_(alpha_leaf), ad.square(ad.sub(leaves[0], 1.0)))
                )

            def meta(tape, leaves):
                return ad.mul(ad.sum_(ad.square(leaves[0])), 0.5)

            phi0 = ParamVector.from_blocks([("phi", np.zeros(1))])
            alpha = ParamVector.from_blocks([("alpha", np.array([a_val]))])
            g, _ = hypergrad_unrolled(inner, meta, phi0, alpha, k=k, beta1=beta)
            return float(g.values[0])

        def oracle(a, k, beta):
            # phi_{j+1} = phi_j - 2*beta*a*(phi_j - 1); d_j = d phi_j / d a
            phi, d = 0.0, 0.0
            for _ in range(k):
                new_d = d * (1 - 2 * beta * a) - 2 * beta * (phi - 1)
                phi = phi - 2 * beta * a * (phi - 1)
                d = new_d
            return phi * d

        worst_a = 0.0
        for a, k in ((1.0, 1), (1.5, 1), (0.7, 3), (1.3, 5)):
            worst_a = max(worst_a, abs(engine(a, k, 0.1) - oracle(a, k, 0.1)))

        # (b) end-to-end on a 129-parameter scorer, K=3, k=5, SGD inner
        prm_config = PRMConfig(feature_dim=2, hidden_dim=8, total_steps=3)
        specs = [
            DomainSpec(
                name=f"d{k}", num_questions=6, steps_per_trajectory=3,
                trajectories_per_question=4, feature_dim=2,
                flaw_rate=(0.2, 0.5, 0.8)[k], feature_noise_sigma=0.1, flaw_decay=0.3,
            )
            for k in range(3)
        ]
        labeled = [
            label_dataset(generate_domain(s, seed=40 + i), num_rollouts=4, seed=70 + i)
            for i, s in enumerate(specs)
        ]
        meta_spec = clean_variant(specs[0], name="m2b")
        meta_trajs = list(generate_domain(meta_spec, seed=91).trajectories())[:20]
        cfg = tr.TrainConfig(
            unroll_steps=5, inner_lr=1e-2, batch_size=16, meta_batch_size=20, seed=2
        )
        data = tr.encode_domains(labeled, prm_config)
        meta = tr.encode_meta_afl(meta_trajs, prm_config)
        phi0 = init_params(prm_config, seed=5)
        assert len(phi0) <= 200
        alpha0 = np.array([1.0, 0.7, 1.3])
        builders = [
            tr._make_inner_builder(tr._inner_batches(data, cfg, 0, j), prm_config)
            for j in range(cfg.unroll_steps)
        ]
        Xb, yb = tr._meta_batch(meta, cfg, 0)
        meta_builder = tr._make_meta_builder(meta, Xb, yb, prm_config)

        def run_window(avals):
            alpha = ParamVector.from_blocks([("alpha", np.asarray(avals, dtype=float))])
            return unroll_window(builders, phi0, alpha, optimizer="sgd", lr=cfg.inner_lr)

        phi_k, _, steps = run_window(alpha0)
        _, mgrad = meta_gradient(meta_builder, phi_k)
        g = window_hypergrad(steps, mgrad, 3)

        worst_b = 0.0
        eps = 1e-3
        for k in range(3):
            vals = []
            for sign in (+1, -1):
                av = alpha0.copy()
                av[k] += sign * eps
                phi_pm, _, _ = run_window(av)
                tape = ad.Tape()
                leaves = [tape.leaf(arr, name) for name, arr in phi_pm.block_arrays()]
                vals.append(float(meta_builder(tape, leaves).value))
            fd = (vals[0] - vals[1]) / (2 * eps)
            worst_b = max(worst_b, abs(g[k] - fd) / max(abs(fd), 1e-12))

        elapsed = time.monotonic() - t0
        ok = worst_a < 1e-10 and worst_b < 1e-3 and elapsed < 120.0
        announce(
            capsys, 2, "hypergradient correctness", ok,
            f"quadratic oracle {worst_a:.2e} (limit 1e-10), "
            f"end-to-end vs FD {worst_b:.2e} (limit 1e-3), {elapsed:.1f}s (limit 120s)",
        )
        assert worst_a < 1e-10
        assert worst_b < 1e-3
        assert elapsed < 120.0


class TestCriterion3MonteCarlo:
    def test_estimator_within_three_sigma(self, capsys):
        t0 = time.monotonic()
        rng = np.random.default_rng(33)
        rollouts = 10_000
        failures = []
        for setting in range(20):
            q0 = float(rng.uniform(0.25, 0.95))
            rho = float(rng.uniform(0.1, 0.9))
            n = 5
            flaws = int(rng.integers(0, n + 1))
            length = int(rng.integers(max(flaws, 1), n + 1))
            spec = DomainSpec(
                name=f"mc{setting}", num_questions=1, steps_per_trajectory=n,
                feature_dim=2, feature_noise_sigma=0.0,
                base_solve_prob=q0, flaw_decay=rho,
            )
            completer = Completer(spec)
            prefix = [
                Step(features=np.zeros(2), flawed=(i < flaws), index=i + 1)
                for i in range(length)
            ]
            question = Question(question_id=f"mc{setting}-q", domain=spec.name, easy=False)
            label = monte_carlo_label(
                completer, question, prefix, num_rollouts=rollouts, seed=500 + setting
            )
            p_true = true_correctness_prob(completer, prefix)
            sigma = (p_true * (1 - p_true) / rollouts) ** 0.5
            if abs(label.p - p_true) > 3 * sigma + 1e-12:
                failures.append((setting, label.p, p_true, sigma))
        elapsed = time.monotonic() - t0
        ok = not failures and elapsed < 60.0
        announce(
            capsys, 3, "Monte-Carlo estimator", ok,
            f"{20 - len(failures)}/20 settings within 3 sigma at {rollouts} rollouts, "
            f"{elapsed:.1f}s (limit 60s)",
        )
        assert not failures, failures
        assert elapsed < 60.0


class TestCriterion4WeightSeparation:
    def test_informative_above_noisy_above_trivial(self, capsys, dreamprm_runs):
        runs, elapsed = dreamprm_runs
        finals = np.array([runs[s].history.final_alpha() for s in SEEDS])
        names = runs[SEEDS[0]].history.domain_names
        idx = {n: i for i, n in enumerate(names)}
        informative = finals[:, [idx["informative-a"], idx["informative-b"]]].mean()
        noisy = finals[:, idx["noisy"]].mean()
        trivial = finals[:, idx["trivial"]].mean()
        gap = informative - noisy
        ok = gap >= 0.2 and trivial < 1.0 < informative and elapsed < 1800.0
        announce(
            capsys, 4, "domain-weight separation", ok,
            f"mean alpha: informative {informative:+.2f}, noisy {noisy:+.2f}, "
            f"trivial {trivial:+.2f}; gap {gap:.2f} (need >= 0.2); "
            f"5-seed sweep {elapsed:.0f}s (limit 1800s)",
        )
        assert gap >= 0.2
        assert trivial < 1.0 < informative
        assert elapsed < 1800.0


class TestCriterion5BeatsVanilla:
    def test_paired_selection_gap(self, capsys, dreamprm_runs, vanilla_runs):
        d_runs, _ = dreamprm_runs
        v_runs, _ = vanilla_runs
        gaps = []
        for s in SEEDS:
            a = float(np.mean(_wins(d_runs[s].report, "select")))
            b = float(np.mean(_wins(v_runs[s].report, "select")))
            gaps.append(a - b)
        seeds_ahead = sum(g > 0 for g in gaps)
        mean_gap = float(np.mean(gaps))

        pooled_select, pooled_pass1 = [], []
        for s in SEEDS:
            pooled_select += _wins(d_runs[s].report, "select")
            pooled_pass1 += _wins(d_runs[s].report, "pass1")
        boot_gap, p_value = paired_bootstrap_gap(pooled_select, pooled_pass1)

        ok = seeds_ahead >= 4 and mean_gap > 0 and p_value <= 0.05
        announce(
            capsys, 5, "beats vanilla", ok,
            f"ahead in {seeds_ahead}/5 seeds, mean select@8 gap {mean_gap:+.3f}; "
            f"select@8 - pass@1 = {boot_gap:+.3f} with P(<=0) = {p_value:.4f} (need <= 0.05)",
        )
        assert seeds_ahead >= 4
        assert mean_gap > 0
        assert p_value <= 0.05


class TestCriterion6AblationOrdering:
    def test_no_afl_not_better(self, capsys, dreamprm_runs, no_afl_runs):
        d_runs, _ = dreamprm_runs
        n_runs, _ = no_afl_runs
        m_dream = float(np.mean([d_runs[s].report.accuracy["select"][8] for s in SEEDS]))
        m_noafl = float(np.mean([n_runs[s].report.accuracy["select"][8] for s in SEEDS]))
        ok = m_noafl <= m_dream
        announce(
            capsys, 6, "ablation ordering", ok,
            f"per-step-objective select@8 {m_noafl:.3f} <= full-objective {m_dream:.3f}",
        )
        assert m_noafl <= m_dream


class TestCriterion7ScalingCurve:
    def test_oracle_identity_and_monotone_budget(self, capsys, dreamprm_runs):
        runs, _ = dreamprm_runs
        # oracle ranking on each seed's eval candidates: select@k == pass@k
        exact = True
        for s in SEEDS:
            config = runs[s].config
            eval_domain = read_domain_jsonl(
                domain_data_path(config, config.eval_domain.name)
            )
            csets = candidate_sets_from_domain(eval_domain)
            rep = evaluate(oracle_scorer(), csets)
            for k in (1, 2, 4, 6, 8):
                if rep.accuracy["select"][k] != rep.accuracy["pass"][k]:
                    exact = False
        m2 = float(np.mean([runs[s].report.accuracy["select"][2] for s in SEEDS]))
        m8 = float(np.mean([runs[s].report.accuracy["select"][8] for s in SEEDS]))
        ok = exact and m8 >= m2
        announce(
            capsys, 7, "scaling curve", ok,
            f"oracle select@k == pass@k exactly: {exact}; "
            f"trained select@2 {m2:.3f} -> select@8 {m8:.3f} (need non-decreasing)",
        )
        assert exact
        assert m8 >= m2


class TestCriterion8DynamicFilter:
    def test_trivial_discarded_informative_kept(self, capsys):
        base = ExperimentConfig()
        informative_spec = base.train_domains[0]
        trivial_spec = DomainSpec(
            name="all-trivial", num_questions=48, steps_per_trajectory=5,
            trajectories_per_question=8, feature_dim=8, flaw_rate=0.3,
            triviality=1.0, feature_noise_sigma=0.1,
            base_solve_prob=0.9, flaw_decay=0.3,
        )

        def discard_rate(spec, seed):
            domain = generate_domain(spec, seed=seed)
            labels = label_dataset(domain, num_rollouts=8, seed=seed + 1)
            kept = apply_dynamic_filter(labels)
            total = len(group_by_question(labels))
            surviving = len(group_by_question(kept))
            return (total - surviving) / total

        trivial_rate = discard_rate(trivial_spec, seed=800)
        informative_rate = discard_rate(informative_spec, seed=801)
        ok = trivial_rate >= 0.95 and informative_rate < 0.5
        announce(
            capsys, 8, "dynamic filter", ok,
            f"fully-trivial domain discarded {trivial_rate:.0%} (need >= 95%), "
            f"informative discarded {informative_rate:.0%} (need < 50%)",
        )
        assert trivial_rate >= 0.95
        assert informative_rate < 0.5


class TestCriterion9Determinism:
    def test_rerun_reproduces_artifacts(self, capsys, dreamprm_runs):
        runs, _ = dreamprm_runs
        config = runs[SEEDS[0]].config
        report_before = eval_report_path(config).read_bytes()
        manifest_before = read_manifest(out_root(config))
        run_pipeline(config)  # same config, same directory: full rerun
        report_after = eval_report_path(config).read_bytes()
        manifest_after = read_manifest(out_root(config))
        same_report = report_before == report_after
        same_manifest = manifest_before == manifest_after
        ok = same_report and same_manifest
        announce(
            capsys, 9, "determinism", ok,
            f"evaluation report byte-identical: {same_report}; "
            f"manifest hashes identical over {len(manifest_before['files'])} files: {same_manifest}",
        )
        assert same_report
        assert same_manifest
