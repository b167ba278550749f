mod common;

use proptest::prelude::*;
use proptest::test_runner::FileFailurePersistence;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use promptrl_core::config::{Config, PolicySection};
use promptrl_core::generator::{GeneratorError, PromptGenerator, Rollout, SlotGenerator};
use promptrl_core::grpo::{self, GroupSample, StepStats};
use promptrl_core::model::RunConfig;
use promptrl_core::policy::{self, Demonstration, PromptTemplate, SlotChoices, SlotPolicyParams};
use promptrl_core::reward::{score_prompt_on_batch, total_reward};
use promptrl_core::training::{self, moving_average, RunOptions};

use common::data_dir;

fn policy_strategy() -> impl Strategy<Value = SlotPolicyParams> {
    (2usize..5, 0usize..4, 1usize..5)
        .prop_flat_map(|(n_instr, max_shots, n_bank)| {
            let count = n_instr + max_shots + 1 + max_shots * n_bank;
            (
                Just((n_instr, max_shots, n_bank)),
                prop::collection::vec(-5.0f64..5.0, count),
            )
        })
        .prop_map(|((n_instr, max_shots, n_bank), logits)| {
            let instructions = (0..n_instr).map(|i| format!("instruction {i}")).collect();
            let bank = (0..n_bank).map(|i| Demonstration::new(format!("x{i}"), "positive")).collect();
            let mut p = SlotPolicyParams::uniform(instructions, bank, max_shots).unwrap();
            p.set_logits_flat(&logits);
            p
        })
}

proptest! {
    #![proptest_config(ProptestConfig {
        failure_persistence: Some(Box::new(FileFailurePersistence::WithSource("regressions"))),
        ..ProptestConfig::default()
    })]

    #[test]
    fn advantages_are_standardized(rewards in prop::collection::vec(-100.0f64..100.0, 2..16)) {
        let adv = grpo::group_advantages(&rewards, 1e-8).unwrap();
        let n = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-12);
        let rm = rewards.iter().sum::<f64>() / n;
        let rstd = (rewards.iter().map(|r| (r - rm).powi(2)).sum::<f64>() / n).sqrt();
        if rstd > 1e-8 {
            let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!((std - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn advantages_ignore_shift_and_scale(
        rewards in prop::collection::vec(0.0f64..4.0, 2..12),
        shift in -1000.0f64..1000.0,
        scale in 1e-3f64..1e3,
    ) {
        let base = grpo::group_advantages(&rewards, 1e-8).unwrap();
        let shifted: Vec<f64> = rewards.iter().map(|r| r + shift).collect();
        let scaled: Vec<f64> = rewards.iter().map(|r| r * scale).collect();
        for (a, b) in base.iter().zip(grpo::group_advantages(&shifted, 1e-8).unwrap()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
        for (a, b) in base.iter().zip(grpo::group_advantages(&scaled, 1e-8).unwrap()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn kl_is_nonnegative(a in -30.0f64..0.0, b in -30.0f64..0.0) {
        let k = grpo::kl_estimate(a, b);
        prop_assert!(k >= 0.0);
        prop_assert_eq!(k == 0.0, a == b);
    }

    #[test]
    fn clipped_term_is_a_lower_bound(ratio in 1e-6f64..10.0, adv in -10.0f64..10.0, eps in 0.01f64..0.99) {
        prop_assert!(grpo::clipped_term(ratio, adv, eps) <= ratio * adv);
    }

    #[test]
    fn gradient_rows_sum_to_zero(params in policy_strategy(), seed in any::<u64>()) {
        let (choices, _) = policy::sample(&params, &mut ChaCha8Rng::seed_from_u64(seed));
        for row in policy::grad_logprob(&params, &choices).unwrap().0 {
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_logprob_matches_logprob(params in policy_strategy(), seed in any::<u64>()) {
        let (choices, lp) = policy::sample(&params, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(lp <= 0.0);
        prop_assert_eq!(policy::logprob(&params, &choices).unwrap(), lp);
    }

    #[test]
    fn out_of_range_choices_are_rejected(params in policy_strategy()) {
        let mut bad: Vec<usize> = vec![0; params.slots.len()];
        bad[0] = params.slots[0].choices.len();
        prop_assert!(policy::logprob(&params, &SlotChoices(bad.clone())).is_err());
        prop_assert!(policy::grad_logprob(&params, &SlotChoices(bad)).is_err());
    }

    #[test]
    fn favored_choice_gains_probability(l0 in -3.0f64..3.0, l1 in -3.0f64..3.0) {
        let mut params = SlotPolicyParams::uniform(vec!["a".into(), "b".into()], vec![], 0).unwrap();
        params.slots[0].logits = vec![l0, l1];
        let cfg = RunConfig { group_size: 4, ..RunConfig::default() };
        let group: Vec<GroupSample> = [0, 1, 0, 1]
            .iter()
            .map(|&c| {
                let choices = SlotChoices(vec![c, 0]);
                GroupSample {
                    logprob_old: policy::logprob(&params, &choices).unwrap(),
                    choices,
                    reward: if c == 1 { 3.5 } else { 1.5 },
                }
            })
            .collect();
        let (next, _) = grpo::grpo_step(&params, &group, &params, &cfg).unwrap();
        prop_assert!(next.slots[0].probabilities()[1] > params.slots[0].probabilities()[1]);
    }
}

#[test]
fn equal_rewards_only_decay() {
    let mut params = SlotPolicyParams::uniform(vec!["a".into(), "b".into()], vec![], 0).unwrap();
    params.slots[0].logits = vec![0.4, -0.2];
    let cfg = RunConfig::default();
    let group: Vec<GroupSample> = (0..cfg.group_size)
        .map(|i| {
            let choices = SlotChoices(vec![i % 2, 0]);
            GroupSample {
                logprob_old: policy::logprob(&params, &choices).unwrap(),
                choices,
                reward: 2.0,
            }
        })
        .collect();
    let (next, stats) = grpo::grpo_step(&params, &group, &params, &cfg).unwrap();
    assert_eq!(stats.mean_abs_advantage, 0.0);
    let shrink = 1.0 - cfg.learning_rate * cfg.weight_decay;
    assert!((next.slots[0].logits[0] - 0.4 * shrink).abs() < 1e-15);
    assert!((next.slots[0].logits[1] + 0.2 * shrink).abs() < 1e-15);
}

/// Records the exact expected reward of the policy after every update.
struct Tracked {
    inner: SlotGenerator,
    reward_by_shots: Vec<f64>,
    expected: Vec<f64>,
}

impl Tracked {
    fn expected_reward(&self) -> f64 {
        let probs = self.inner.params.slot("shot_count").unwrap().probabilities();
        probs.iter().zip(&self.reward_by_shots).map(|(p, r)| p * r).sum()
    }
}

impl PromptGenerator for Tracked {
    fn sample(&self, rng: &mut dyn RngCore) -> Result<Rollout, GeneratorError> {
        self.inner.sample(rng)
    }
    fn update(&mut self, group: &[(Rollout, f64)], cfg: &RunConfig) -> Result<Option<StepStats>, GeneratorError> {
        let stats = self.inner.update(group, cfg)?;
        self.expected.push(self.expected_reward());
        Ok(stats)
    }
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }
    fn save_state(&self) -> String {
        self.inner.save_state()
    }
    fn load_state(&mut self, text: &str) -> Result<(), GeneratorError> {
        self.inner.load_state(text)
    }
}

#[test]
fn synthetic_expected_reward_rises_in_moving_average() {
    let config = Config::load(&data_dir().join("synthetic.toml")).unwrap();
    let train = config.load_train().unwrap();
    let valid = config.load_valid().unwrap();
    let evaluator = config.evaluator();
    let cfg = &config.file.run;

    let PolicySection::Slot(slot) = &config.file.policy else {
        panic!("synthetic config uses the slot policy");
    };
    let params = SlotPolicyParams::uniform(
        slot.instructions.clone(),
        config.demonstration_bank().unwrap(),
        slot.max_shots,
    )
    .unwrap();
    let template = PromptTemplate::new("{instruction}", config.spec.output_suffix.clone());
    let inner = SlotGenerator::new(template, params);

    // the rulebook reacts only to the shot count, so one rendering per count suffices
    let reward_by_shots: Vec<f64> = (0..=3)
        .map(|k| {
            let choices = SlotChoices(vec![0, k, 0, 1, 2]);
            let out = inner.emit(&choices).unwrap();
            let score = score_prompt_on_batch(out.answer.as_deref().unwrap(), &train, &config.spec, evaluator.as_ref())
                .unwrap();
            total_reward(&out, score.summary, cfg).total
        })
        .collect();
    assert_eq!(reward_by_shots, vec![1.5, 1.5, 3.5, 3.5]);

    let mut tracked = Tracked {
        inner,
        reward_by_shots,
        expected: Vec::new(),
    };
    let start = tracked.expected_reward();
    training::run_training(
        cfg,
        &config.spec,
        &train,
        &valid,
        &mut tracked,
        evaluator.as_ref(),
        None,
        &RunOptions::default(),
    )
    .unwrap();

    let moving = moving_average(&tracked.expected, 100);
    let blocks: Vec<f64> = moving.iter().step_by(100).copied().collect();
    println!("expected reward at start {start:.4}, per 100 iterations: {blocks:.4?}");
    assert_eq!(tracked.expected.len(), cfg.iterations);
    assert!(blocks[0] > start);
    assert!(blocks.windows(2).all(|w| w[1] >= w[0]), "{blocks:?}");
}
