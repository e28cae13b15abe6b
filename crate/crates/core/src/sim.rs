//! Tabular policy-optimisation harness on synthetic multi-domain tasks.
//!
//! Each prompt is a single categorical decision. A prompt group is `G`
//! sampled actions, rewarded 1 for the correct action and 0 otherwise;
//! advantages come from [`compute_arpo`] and the logits are updated by
//! gradient ascent on the clipped surrogate with a KL penalty towards the
//! initial policy.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::advantage::{compute_arpo, ArpoConfig, CurriculumSchedule, RolloutGroup};
use crate::error::{Error, Result};
use crate::reward::{combine, score_single_choice, CognitiveDomain, RewardWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    /// Plain group-normalised advantages.
    #[serde(rename = "GRPO", alias = "grpo")]
    Grpo,
    /// Domain temperature only, no in-domain clustering.
    #[serde(rename = "DomainOnly", alias = "domain_only")]
    DomainOnly,
    /// Domain and cluster temperatures, curriculum and KL dampening.
    #[serde(rename = "ARPO", alias = "arpo")]
    Arpo,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Grpo => "GRPO",
            Strategy::DomainOnly => "DomainOnly",
            Strategy::Arpo => "ARPO",
        }
    }

    /// Specialises a base advantage configuration for this strategy.
    pub fn advantage_config(self, base: &ArpoConfig) -> ArpoConfig {
        let mut cfg = *base;
        match self {
            Strategy::Grpo => {
                cfg.domain_scaling = false;
                cfg.cluster_scaling = false;
                cfg.dampening.enabled = false;
            }
            Strategy::DomainOnly => {
                cfg.domain_scaling = true;
                cfg.cluster_scaling = false;
            }
            Strategy::Arpo => {
                cfg.domain_scaling = true;
                cfg.cluster_scaling = true;
            }
        }
        cfg
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "GRPO" | "grpo" => Ok(Strategy::Grpo),
            "DomainOnly" | "domain_only" => Ok(Strategy::DomainOnly),
            "ARPO" | "arpo" => Ok(Strategy::Arpo),
            _ => Err(Error::invalid(format!("unknown strategy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTask {
    pub prompt_id: String,
    pub domain: CognitiveDomain,
    pub num_actions: usize,
    pub correct: usize,
    /// Wrong action that starts with an elevated logit.
    pub deceptive: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSpec {
    /// Prompt count per domain.
    pub counts: BTreeMap<CognitiveDomain, usize>,
    pub num_actions: usize,
    /// Fraction of the hard domain's prompts that get a deceptive prior.
    pub deceptive_fraction: f64,
    pub hard_domain: CognitiveDomain,
    /// Initial logit of the deceptive action (others start at 0).
    pub deceptive_logit: f64,
}

impl Default for EnvSpec {
    fn default() -> Self {
        use CognitiveDomain::*;
        Self {
            counts: BTreeMap::from([
                (ObjectUnderstanding, 70),
                (SceneUnderstanding, 15),
                (SpatialPerception, 8),
                (SceneReasoning, 7),
            ]),
            num_actions: 4,
            deceptive_fraction: 1.0,
            hard_domain: SceneReasoning,
            deceptive_logit: 2.0,
        }
    }
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_actions < 2 {
            return Err(Error::invalid("num_actions must be >= 2"));
        }
        if self.counts.is_empty() || self.counts.values().any(|&c| c == 0) {
            return Err(Error::invalid(
                "every listed domain needs at least one prompt",
            ));
        }
        if !(0.0..=1.0).contains(&self.deceptive_fraction) {
            return Err(Error::invalid("deceptive_fraction must lie in [0, 1]"));
        }
        if !self.deceptive_logit.is_finite() {
            return Err(Error::invalid("deceptive_logit must be finite"));
        }
        Ok(())
    }

    /// Domain with the fewest prompts; ties go to the hard domain, then to
    /// the later domain.
    pub fn minority_domain(&self) -> Option<CognitiveDomain> {
        let min = *self.counts.values().min()?;
        if self.counts.get(&self.hard_domain) == Some(&min) {
            return Some(self.hard_domain);
        }
        self.counts
            .iter()
            .filter(|(_, &c)| c == min)
            .map(|(&d, _)| d)
            .next_back()
    }
}

/// Builds the task list: domains in canonical order, correct actions drawn
/// uniformly, deceptive priors only in the hard domain.
pub fn make_env(spec: &EnvSpec, seed: u64) -> Result<Vec<ToyTask>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tasks = Vec::new();
    for (&domain, &count) in &spec.counts {
        let deceptive_count = if domain == spec.hard_domain {
            (spec.deceptive_fraction * count as f64).round() as usize
        } else {
            0
        };
        for i in 0..count {
            let correct = rng.random_range(0..spec.num_actions);
            let deceptive = (i < deceptive_count).then(|| {
                let offset = rng.random_range(1..spec.num_actions);
                (correct + offset) % spec.num_actions
            });
            tasks.push(ToyTask {
                prompt_id: format!("{}-{i:03}", domain.code()),
                domain,
                num_actions: spec.num_actions,
                correct,
                deceptive,
            });
        }
    }
    Ok(tasks)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// One logit vector per prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub logits: Vec<Vec<f64>>,
    /// Softmax temperature applied when sampling only.
    pub temperature: f64,
}

impl TabularPolicy {
    pub fn for_tasks(tasks: &[ToyTask], deceptive_logit: f64, temperature: f64) -> Self {
        let logits = tasks
            .iter()
            .map(|t| {
                let mut l = vec![0.0; t.num_actions];
                if let Some(d) = t.deceptive {
                    l[d] = deceptive_logit;
                }
                l
            })
            .collect();
        Self {
            logits,
            temperature,
        }
    }

    pub fn probs(&self, prompt: usize) -> Vec<f64> {
        softmax(&self.logits[prompt])
    }

    pub fn sampling_probs(&self, prompt: usize) -> Vec<f64> {
        let scaled: Vec<f64> = self.logits[prompt]
            .iter()
            .map(|l| l / self.temperature)
            .collect();
        softmax(&scaled)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub action: usize,
    /// Log-probability under the untempered policy at sampling time.
    pub logp_old: f64,
}

fn categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

pub fn sample_group(
    policy: &TabularPolicy,
    prompt: usize,
    group_size: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Sample>> {
    if group_size < 2 {
        return Err(Error::invalid("group size must be >= 2"));
    }
    let probs = policy.sampling_probs(prompt);
    let logp = log_softmax(&policy.logits[prompt]);
    Ok((0..group_size)
        .map(|_| {
            let action = categorical(&probs, rng);
            Sample {
                action,
                logp_old: logp[action],
            }
        })
        .collect())
}

/// `sum_a p(a) ln(p(a) / q(a))` for categorical distributions.
pub fn exact_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pa, _)| pa > 0.0)
        .map(|(&pa, &qa)| pa * (pa / qa).ln())
        .sum::<f64>()
        .max(0.0)
}

pub fn policy_kl(a: &TabularPolicy, b: &TabularPolicy, prompt: usize) -> f64 {
    exact_kl(&a.probs(prompt), &b.probs(prompt))
}

/// Total-variation distance between two categorical distributions.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// `min(ratio * adv, clip(ratio, 1 - eps, 1 + eps) * adv)`.
pub fn surrogate_term(ratio: f64, adv: f64, eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    (ratio * adv).min(clipped * adv)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateGrad {
    /// Gradient of the objective with respect to the prompt's logits.
    pub grad: Vec<f64>,
    pub objective: f64,
    /// Samples whose surrogate gradient was cut by the clip.
    pub clipped: usize,
}

/// Gradient of
/// `(1/G) sum_i min(phi_i A_i, clip(phi_i) A_i) - beta * KL(pi || pi_ref)`
/// with `phi_i = pi(o_i) / pi_old(o_i)`, with respect to one prompt's logits.
pub fn clipped_surrogate_grad(
    logits: &[f64],
    samples: &[Sample],
    advantages: &[f64],
    clip_eps: f64,
    beta: f64,
    ref_logits: &[f64],
) -> Result<SurrogateGrad> {
    if samples.len() != advantages.len() {
        return Err(Error::DimensionMismatch {
            expected: samples.len(),
            got: advantages.len(),
        });
    }
    if logits.len() != ref_logits.len() {
        return Err(Error::DimensionMismatch {
            expected: logits.len(),
            got: ref_logits.len(),
        });
    }
    if samples.is_empty() {
        return Err(Error::invalid("surrogate needs at least one sample"));
    }
    let logp = log_softmax(logits);
    let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    let g = samples.len() as f64;
    let mut grad = vec![0.0; logits.len()];
    let mut objective = 0.0;
    let mut clipped = 0;
    for (s, &adv) in samples.iter().zip(advantages) {
        if s.action >= logits.len() {
            return Err(Error::invalid(format!("action {} out of range", s.action)));
        }
        let ratio = (logp[s.action] - s.logp_old).exp();
        let term = surrogate_term(ratio, adv, clip_eps);
        objective += term / g;
        if ratio * adv <= term {
            // d ratio / d logits = ratio * (e_a - pi)
            let scale = adv * ratio / g;
            for (k, gk) in grad.iter_mut().enumerate() {
                let indicator = if k == s.action { 1.0 } else { 0.0 };
                *gk += scale * (indicator - probs[k]);
            }
        } else {
            clipped += 1;
        }
    }
    if beta != 0.0 {
        let ref_logp = log_softmax(ref_logits);
        let log_ratio: Vec<f64> = logp.iter().zip(&ref_logp).map(|(a, b)| a - b).collect();
        let kl: f64 = probs.iter().zip(&log_ratio).map(|(p, r)| p * r).sum();
        objective -= beta * kl;
        for k in 0..grad.len() {
            grad[k] -= beta * probs[k] * (log_ratio[k] - kl);
        }
    }
    Ok(SurrogateGrad {
        grad,
        objective,
        clipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_coef: f64,
    pub temperature: f64,
    pub learning_rate: f64,
    pub total_steps: u64,
    pub seed: u64,
    pub strategy: Strategy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_eps: 0.2,
            kl_coef: 0.05,
            temperature: 0.9,
            learning_rate: 0.005,
            total_steps: 1000,
            seed: 0,
            strategy: Strategy::Arpo,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::invalid("group_size must be >= 2"));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::invalid("clip_eps must lie in (0, 1)"));
        }
        if !(self.kl_coef >= 0.0 && self.kl_coef.is_finite()) {
            return Err(Error::invalid("kl_coef must be finite and >= 0"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be finite and >= 0"));
        }
        if self.total_steps == 0 {
            return Err(Error::invalid("total_steps must be positive"));
        }
        Ok(())
    }

    /// Advantage configuration actually used by the run: the strategy picks
    /// the scaling flags and the curriculum spans the whole run.
    pub fn effective_advantage(&self, base: &ArpoConfig) -> ArpoConfig {
        let mut cfg = self.strategy.advantage_config(base);
        cfg.curriculum = CurriculumSchedule {
            total_steps: self.total_steps,
            exponent: base.curriculum.exponent,
        };
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainStepMetrics {
    pub domain: CognitiveDomain,
    pub mean_reward: f64,
    pub mean_abs_advantage: f64,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub groups_sampled: usize,
    pub groups_used: usize,
    pub groups_skipped: usize,
    pub clipped_samples: usize,
    pub domains: Vec<DomainStepMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub strategy: Strategy,
    pub seed: u64,
    pub steps: Vec<StepMetrics>,
    /// Mean probability of the correct action per domain at the end.
    pub final_accuracy: BTreeMap<CognitiveDomain, f64>,
    /// Mean KL(pi || pi_ref) over prompts at the end.
    pub final_mean_kl: f64,
}

/// Per-step, per-prompt generator so sampling does not depend on the order
/// in which prompts are visited.
fn prompt_rng(seed: u64, step: u64, prompt: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step.wrapping_mul(1 << 20).wrapping_add(prompt as u64));
    rng
}

fn option_letter(action: usize) -> char {
    (b'A' + (action % 26) as u8) as char
}

pub fn domain_accuracy(
    policy: &TabularPolicy,
    tasks: &[ToyTask],
) -> BTreeMap<CognitiveDomain, f64> {
    let mut acc: BTreeMap<CognitiveDomain, (f64, usize)> = BTreeMap::new();
    for (i, t) in tasks.iter().enumerate() {
        let e = acc.entry(t.domain).or_default();
        e.0 += policy.probs(i)[t.correct];
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(d, (s, n))| (d, s / n as f64))
        .collect()
}

/// Trains a fresh policy on `tasks` and returns the metrics together with
/// the final policy.
pub fn train(
    cfg: &TrainConfig,
    advantage: &ArpoConfig,
    env: &EnvSpec,
    tasks: &[ToyTask],
) -> Result<(RunMetrics, TabularPolicy)> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::invalid("no tasks to train on"));
    }
    let adv_cfg = cfg.effective_advantage(advantage);
    adv_cfg.validate()?;
    let reward_weights = RewardWeights::new(1.0, 0.0, 0.0)?;
    let reference = TabularPolicy::for_tasks(tasks, env.deceptive_logit, cfg.temperature);
    let mut policy = reference.clone();
    let mut steps = Vec::with_capacity(cfg.total_steps as usize);

    for step in 0..cfg.total_steps {
        let mut samples = Vec::with_capacity(tasks.len());
        let mut groups = Vec::with_capacity(tasks.len());
        for (i, task) in tasks.iter().enumerate() {
            let mut rng = prompt_rng(cfg.seed, step, i);
            let group = sample_group(&policy, i, cfg.group_size, &mut rng)?;
            let rewards = group
                .iter()
                .map(|s| {
                    let r =
                        score_single_choice(option_letter(s.action), option_letter(task.correct));
                    combine(r, 0.0, 0.0, &reward_weights)
                })
                .collect::<Result<Vec<f64>>>()?;
            let kl = policy_kl(&policy, &reference, i);
            groups.push(RolloutGroup::new(
                task.prompt_id.clone(),
                task.domain,
                rewards,
                Some(vec![kl; cfg.group_size]),
            )?);
            samples.push(group);
        }

        let out = compute_arpo(&groups, step, &adv_cfg)?;
        let index: BTreeMap<&str, usize> = tasks
            .iter()
            .enumerate()
            .map(|(i, t)| (t.prompt_id.as_str(), i))
            .collect();

        let mut clipped_samples = 0;
        let mut abs_adv: BTreeMap<CognitiveDomain, (f64, usize)> = BTreeMap::new();
        let mut updates = Vec::new();
        for chunk in out.records.chunk_by(|a, b| a.prompt_id == b.prompt_id) {
            let i = index[chunk[0].prompt_id.as_str()];
            let advantages: Vec<f64> = chunk.iter().map(|r| r.a_final).collect();
            let e = abs_adv.entry(chunk[0].domain).or_default();
            e.0 += advantages.iter().map(|a| a.abs()).sum::<f64>();
            e.1 += advantages.len();
            let g = clipped_surrogate_grad(
                &policy.logits[i],
                &samples[i],
                &advantages,
                cfg.clip_eps,
                cfg.kl_coef,
                &reference.logits[i],
            )?;
            clipped_samples += g.clipped;
            updates.push((i, g.grad));
        }
        for (i, grad) in updates {
            for (l, g) in policy.logits[i].iter_mut().zip(grad) {
                *l += cfg.learning_rate * g;
            }
        }

        let mut domains = Vec::new();
        for domain in CognitiveDomain::ALL {
            let members: Vec<usize> = (0..tasks.len())
                .filter(|&i| tasks[i].domain == domain)
                .collect();
            if members.is_empty() {
                continue;
            }
            let total: f64 = members.iter().flat_map(|&i| groups[i].rewards()).sum();
            let skipped = members
                .iter()
                .filter(|&&i| {
                    out.skip_report
                        .skipped_prompt_ids
                        .contains(&tasks[i].prompt_id)
                })
                .count();
            let (abs_sum, abs_n) = abs_adv.get(&domain).copied().unwrap_or_default();
            domains.push(DomainStepMetrics {
                domain,
                mean_reward: total / (members.len() * cfg.group_size) as f64,
                mean_abs_advantage: if abs_n == 0 {
                    0.0
                } else {
                    abs_sum / abs_n as f64
                },
                skipped,
            });
        }
        steps.push(StepMetrics {
            step,
            groups_sampled: groups.len(),
            groups_used: out.skip_report.retained_groups,
            groups_skipped: out.skip_report.skipped(),
            clipped_samples,
            domains,
        });
    }

    let final_mean_kl = (0..tasks.len())
        .map(|i| policy_kl(&policy, &reference, i))
        .sum::<f64>()
        / tasks.len() as f64;
    let metrics = RunMetrics {
        strategy: cfg.strategy,
        seed: cfg.seed,
        steps,
        final_accuracy: domain_accuracy(&policy, tasks),
        final_mean_kl,
    };
    Ok((metrics, policy))
}

/// Builds the environment from `cfg.seed` and trains on it.
pub fn run_training(
    cfg: &TrainConfig,
    advantage: &ArpoConfig,
    env: &EnvSpec,
) -> Result<RunMetrics> {
    let tasks = make_env(env, cfg.seed)?;
    train(cfg, advantage, env, &tasks).map(|(m, _)| m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: Strategy,
    pub seed: u64,
    pub final_accuracy: BTreeMap<CognitiveDomain, f64>,
    pub final_mean_kl: f64,
}

impl From<&RunMetrics> for RunSummary {
    fn from(m: &RunMetrics) -> Self {
        Self {
            strategy: m.strategy,
            seed: m.seed,
            final_accuracy: m.final_accuracy.clone(),
            final_mean_kl: m.final_mean_kl,
        }
    }
}

/// Paired comparison of one strategy against the baseline on the minority
/// domain, seed by seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub mean_accuracy: BTreeMap<CognitiveDomain, f64>,
    pub minority_mean_accuracy: f64,
    /// Seeds where the minority accuracy is at least the baseline's.
    pub not_worse: usize,
    /// Seeds where it is strictly higher.
    pub wins: usize,
    /// Seeds where it is strictly lower.
    pub losses: usize,
    /// Mean of (strategy - baseline) minority accuracy.
    pub mean_gap: f64,
    /// One-sided sign-test p-value for "better than baseline".
    pub sign_test_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub minority_domain: CognitiveDomain,
    pub baseline: Strategy,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunSummary>,
    pub strategies: Vec<StrategySummary>,
}

impl ComparisonReport {
    pub fn summary(&self, strategy: Strategy) -> Option<&StrategySummary> {
        self.strategies.iter().find(|s| s.strategy == strategy)
    }
}

/// P(X >= wins) for X ~ Binomial(wins + losses, 1/2).
fn sign_test(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let choose = |n: usize, k: usize| -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    };
    (wins..=n).map(|k| choose(n, k)).sum::<f64>() / 2f64.powi(n as i32)
}

/// Summarises finished runs. The first strategy in `strategies` is the
/// baseline.
pub fn summarize_runs(
    env: &EnvSpec,
    strategies: &[Strategy],
    seeds: &[u64],
    runs: Vec<RunSummary>,
) -> Result<ComparisonReport> {
    let minority = env
        .minority_domain()
        .ok_or_else(|| Error::invalid("environment has no domains"))?;
    let baseline = *strategies
        .first()
        .ok_or_else(|| Error::invalid("no strategies to compare"))?;
    let minority_acc = |s: Strategy, seed: u64| -> f64 {
        runs.iter()
            .find(|r| r.strategy == s && r.seed == seed)
            .and_then(|r| r.final_accuracy.get(&minority).copied())
            .unwrap_or(0.0)
    };
    let mut summaries = Vec::new();
    for &s in strategies {
        let mut mean_accuracy: BTreeMap<CognitiveDomain, f64> = BTreeMap::new();
        for r in runs.iter().filter(|r| r.strategy == s) {
            for (d, a) in &r.final_accuracy {
                *mean_accuracy.entry(*d).or_default() += a / seeds.len() as f64;
            }
        }
        let gaps: Vec<f64> = seeds
            .iter()
            .map(|&seed| minority_acc(s, seed) - minority_acc(baseline, seed))
            .collect();
        let wins = gaps.iter().filter(|&&g| g > 0.0).count();
        let losses = gaps.iter().filter(|&&g| g < 0.0).count();
        summaries.push(StrategySummary {
            strategy: s,
            minority_mean_accuracy: mean_accuracy.get(&minority).copied().unwrap_or(0.0),
            mean_accuracy,
            not_worse: gaps.iter().filter(|&&g| g >= 0.0).count(),
            wins,
            losses,
            mean_gap: gaps.iter().sum::<f64>() / gaps.len().max(1) as f64,
            sign_test_p: sign_test(wins, losses),
        });
    }
    Ok(ComparisonReport {
        minority_domain: minority,
        baseline,
        seeds: seeds.to_vec(),
        runs,
        strategies: summaries,
    })
}

/// Trains every strategy on every seed and compares them on the minority
/// domain. Runs are independent and execute on scoped threads.
pub fn compare_strategies(
    base: &TrainConfig,
    advantage: &ArpoConfig,
    env: &EnvSpec,
    strategies: &[Strategy],
    seeds: &[u64],
) -> Result<ComparisonReport> {
    if strategies.len() < 2 {
        return Err(Error::invalid("comparison needs at least two strategies"));
    }
    if seeds.len() < 3 {
        return Err(Error::invalid("comparison needs at least three seeds"));
    }
    let jobs: Vec<(Strategy, u64)> = strategies
        .iter()
        .flat_map(|&s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let results: Vec<Result<RunMetrics>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|&(strategy, seed)| {
                let cfg = TrainConfig {
                    strategy,
                    seed,
                    ..base.clone()
                };
                scope.spawn(move || run_training(&cfg, advantage, env))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    });
    let runs = results
        .into_iter()
        .map(|r| r.map(|m| RunSummary::from(&m)))
        .collect::<Result<Vec<_>>>()?;
    summarize_runs(env, strategies, seeds, runs)
}
