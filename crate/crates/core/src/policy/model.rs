use std::path::Path;

use super::{PolicyConfig, PolicyError, Sidecar, TaskDims, SIDECAR_VERSION};
use crate::nn::{
    ddpm_loss, ddpm_sample, ddpm_sample_greedy, load_params, mean_pool, mean_pool_backward, params_to_bytes, save_params, CrossAttention,
    Denoiser, DiffusionSchedule, Mlp, MlpCache, NnError, ParamId, ParamStore, Tensor,
};
use crate::pomdp::{featurize, ActionId, Task};
use crate::rng::SplitMix64;
use crate::tasks::Demonstration;

pub const CLASSIFIER_THRESHOLD: f32 = 0.5;

const EXEC_PREFIX: &str = "exec.";
const PLAN_PREFIX: &str = "plan.";

/// One executor training example: the inputs the agent would have seen at a
/// demonstration step, and the targets.
#[derive(Clone, Debug, PartialEq)]
pub struct ExecSample {
    pub current: Vec<f32>,
    pub anchor: Option<Vec<f32>>,
    pub sliding: Vec<Vec<f32>>,
    pub text: usize,
    pub last_action: Option<ActionId>,
    pub counter: usize,
    /// `H` target actions, padded with the segment's final action.
    pub chunk: Vec<ActionId>,
    pub end: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanSample {
    pub o0: Vec<f32>,
    pub key: Vec<(usize, Vec<f32>)>,
    pub label: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SampleLoss {
    pub diffusion: f32,
    pub classifier: f32,
    pub end_correct: bool,
}

/// Weights and layer layout of one policy.
#[derive(Clone, Debug)]
pub struct Mem0Model {
    pub dims: TaskDims,
    pub config: PolicyConfig,
    exec: ParamStore<f32>,
    plan: ParamStore<f32>,
    encoder: Mlp,
    text: ParamId,
    anchor_att: CrossAttention,
    slide_att: CrossAttention,
    denoiser: Denoiser,
    classifier: Mlp,
    key_mlp: Mlp,
    goal: ParamId,
    planner_head: Mlp,
    schedule: DiffusionSchedule,
}

struct Encoded {
    z: Vec<f32>,
    cache: MlpCache<f32>,
}

impl Mem0Model {
    pub fn new(dims: TaskDims, config: PolicyConfig, seed: u64) -> Result<Self, PolicyError> {
        config.validate()?;
        if dims.vocab_size == 0 {
            return Err(PolicyError::EmptyVocabulary);
        }
        let c = &config;
        let mut rng = SplitMix64::new(seed);
        let mut exec = ParamStore::new();
        let encoder = Mlp::new(&mut exec, "exec.enc", &[dims.feature_dim, c.encoder_hidden, c.tokens * c.d_z], &mut rng)?;
        let text = exec.add_normal("exec.text", &[dims.vocab_size + 1, c.d_z], 1.0, &mut rng)?;
        let anchor_att = CrossAttention::new(&mut exec, "exec.anchor", c.d_z, &mut rng)?;
        let slide_att = CrossAttention::new(&mut exec, "exec.slide", c.d_z, &mut rng)?;
        let cond = 3 * c.d_z + proprio_dim(&dims);
        let denoiser = Denoiser::new(
            &mut exec,
            "exec.den",
            c.horizon,
            dims.action_count,
            cond,
            c.time_embedding,
            &c.denoiser_hidden,
            &mut rng,
        )?;
        let classifier = Mlp::new(&mut exec, "exec.clf", &[cond, c.classifier_hidden, 1], &mut rng)?;

        let mut plan = ParamStore::new();
        let key_mlp = Mlp::new(&mut plan, "plan.key", &[dims.vocab_size + dims.feature_dim, c.key_dim, c.key_dim], &mut rng)?;
        let goal = plan.add_normal("plan.goal", &[c.d_z], 1.0, &mut rng)?;
        let planner_head = Mlp::new(
            &mut plan,
            "plan.head",
            &[dims.feature_dim + c.d_z + c.key_dim, c.planner_hidden, dims.vocab_size],
            &mut rng,
        )?;
        let schedule = DiffusionSchedule::new(c.diffusion_steps);
        Ok(Self {
            dims,
            config,
            exec,
            plan,
            encoder,
            text,
            anchor_att,
            slide_att,
            denoiser,
            classifier,
            key_mlp,
            goal,
            planner_head,
            schedule,
        })
    }

    /// Fail unless `task` has the dimensions this model was built for.
    pub fn check_task(&self, task: &dyn Task) -> Result<(), PolicyError> {
        let found = TaskDims::of(task, &self.config)?;
        if found != self.dims {
            return Err(PolicyError::TaskMismatch { expected: format!("{:?}", self.dims), found: format!("{found:?}") });
        }
        Ok(())
    }

    pub fn exec_store(&self) -> &ParamStore<f32> {
        &self.exec
    }

    pub fn exec_store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.exec
    }

    pub fn plan_store(&self) -> &ParamStore<f32> {
        &self.plan
    }

    pub fn plan_store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.plan
    }

    pub fn cond_dim(&self) -> usize {
        3 * self.config.d_z + proprio_dim(&self.dims)
    }

    /// Text-embedding row: the subtask when decomposed, the task goal otherwise.
    pub fn text_id(&self, subtask: usize) -> usize {
        if self.dims.decomposed { subtask } else { self.dims.vocab_size }
    }

    fn encode_cached(&self, feat: &[f32]) -> Result<Encoded, PolicyError> {
        let (tokens, cache) = self.encoder.forward_cached(&self.exec, feat)?;
        let grid = Tensor::from_vec(&[self.config.tokens, self.config.d_z], tokens)?;
        Ok(Encoded { z: mean_pool(&grid)?, cache })
    }

    fn encode_backward(&mut self, enc: &Encoded, g: &[f32]) {
        let g_tokens = mean_pool_backward(self.config.tokens, g);
        self.encoder.backward(&mut self.exec, &enc.cache, &g_tokens.data);
    }

    /// Frame latent `z_img`.
    pub fn encode(&self, feat: &[f32]) -> Result<Vec<f32>, PolicyError> {
        Ok(self.encode_cached(feat)?.z)
    }

    /// Text latent `z_text` for an embedding row from [`Self::text_id`].
    pub fn text_latent(&self, id: usize) -> &[f32] {
        let d = self.config.d_z;
        &self.exec.value(self.text)[id * d..(id + 1) * d]
    }

    /// `[z̃_anchor ; z̃_slide ; z_text]`. Empty sets leave `z` unchanged.
    pub fn fuse(&self, z: &[f32], anchor: &[Vec<f32>], sliding: &[Vec<f32>], text: usize) -> Result<Vec<f32>, PolicyError> {
        let mut c = self.anchor_att.forward(&self.exec, z, anchor)?;
        c.extend(self.slide_att.forward(&self.exec, z, sliding)?);
        c.extend_from_slice(self.text_latent(text));
        Ok(c)
    }

    /// One-hot of the last action (slot 0 = none) and the step-in-subtask
    /// counter over the task horizon. All zeros for the markovian baseline.
    pub fn proprio(&self, last_action: Option<ActionId>, counter: usize) -> Vec<f32> {
        let mut p = vec![0.0; proprio_dim(&self.dims)];
        if self.config.ablations.markovian {
            return p;
        }
        p[last_action.map_or(0, |a| a.index() + 1)] = 1.0;
        p[self.dims.action_count + 1] = (counter as f32 / self.dims.horizon as f32).min(1.0);
        p
    }

    pub fn classify_logit(&self, cond: &[f32]) -> Result<f32, PolicyError> {
        Ok(self.classifier.forward(&self.exec, cond)?[0])
    }

    pub fn classify_end(&self, cond: &[f32]) -> Result<bool, PolicyError> {
        Ok(sigmoid(self.classify_logit(cond)?) > CLASSIFIER_THRESHOLD)
    }

    pub fn sample_chunk(&self, cond: &[f32], seed: u64) -> Result<Tensor<f32>, PolicyError> {
        Ok(ddpm_sample(&self.denoiser, &self.exec, &self.schedule, (self.config.horizon, self.dims.action_count), cond, seed)?)
    }

    /// Deterministic chunk from the noise-free reverse chain.
    pub fn sample_chunk_greedy(&self, cond: &[f32]) -> Result<Tensor<f32>, PolicyError> {
        Ok(ddpm_sample_greedy(&self.denoiser, &self.exec, &self.schedule, (self.config.horizon, self.dims.action_count), cond)?)
    }

    /// Row-wise argmax.
    pub fn decode_chunk(&self, chunk: &Tensor<f32>) -> Vec<ActionId> {
        (0..chunk.rows())
            .map(|r| {
                let row = chunk.row(r);
                let best = (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b });
                ActionId(best as u16)
            })
            .collect()
    }

    pub fn target_chunk(&self, actions: &[ActionId]) -> Tensor<f32> {
        let a = self.dims.action_count;
        let mut t = Tensor { shape: vec![actions.len(), a], data: vec![-1.0; actions.len() * a] };
        for (r, act) in actions.iter().enumerate() {
            t.data[r * a + act.index()] = 1.0;
        }
        t
    }

    fn key_input(&self, subtask: usize, feat: &[f32]) -> Vec<f32> {
        let mut x = vec![0.0; self.dims.vocab_size];
        x[subtask] = 1.0;
        x.extend_from_slice(feat);
        x
    }

    /// Position-weighted sum of per-entry encodings, or zeros when `use_key` is off.
    fn pooled_key(&self, key: &[(usize, Vec<f32>)], use_key: bool) -> Result<(Vec<f32>, Vec<(Vec<f32>, MlpCache<f32>)>), PolicyError> {
        let mut pooled = vec![0.0; self.config.key_dim];
        let mut caches = Vec::new();
        if !use_key {
            return Ok((pooled, caches));
        }
        for (i, (s, feat)) in key.iter().enumerate() {
            let input = self.key_input(*s, feat);
            let (f, cache) = self.key_mlp.forward_cached(&self.plan, &input)?;
            let w = self.key_weight(i);
            pooled.iter_mut().zip(&f).for_each(|(p, v)| *p += w * v);
            caches.push((input, cache));
        }
        Ok((pooled, caches))
    }

    fn key_weight(&self, i: usize) -> f32 {
        (i + 1) as f32 / self.dims.horizon as f32
    }

    /// Planner input: `[o_0 ; goal ; pooled key memory]`.
    pub fn planner_input(&self, o0: &[f32], key: &[(usize, Vec<f32>)], use_key: bool) -> Result<Vec<f32>, PolicyError> {
        let mut x = o0.to_vec();
        x.extend_from_slice(self.plan.value(self.goal));
        x.extend(self.pooled_key(key, use_key)?.0);
        Ok(x)
    }

    pub fn plan_logits(&self, o0: &[f32], key: &[(usize, Vec<f32>)], use_key: bool) -> Result<Vec<f32>, PolicyError> {
        Ok(self.planner_head.forward(&self.plan, &self.planner_input(o0, key, use_key)?)?)
    }

    pub fn plan(&self, o0: &[f32], key: &[(usize, Vec<f32>)], use_key: bool) -> Result<usize, PolicyError> {
        let l = self.plan_logits(o0, key, use_key)?;
        Ok((0..l.len()).fold(0, |b, i| if l[i] > l[b] { i } else { b }))
    }

    /// Diffusion and end-classifier losses for one sample. With `scale`, the
    /// gradients of `scale · (diffusion + classifier)` are accumulated.
    pub fn exec_loss(&mut self, s: &ExecSample, seed: u64, scale: Option<f32>) -> Result<SampleLoss, PolicyError> {
        let d = self.config.d_z;
        let cur = self.encode_cached(&s.current)?;
        let anchor = s.anchor.as_ref().map(|a| self.encode_cached(a)).transpose()?;
        let sliding = s.sliding.iter().map(|f| self.encode_cached(f)).collect::<Result<Vec<_>, _>>()?;
        let a_mem: Vec<Vec<f32>> = anchor.iter().map(|e| e.z.clone()).collect();
        let s_mem: Vec<Vec<f32>> = sliding.iter().map(|e| e.z.clone()).collect();
        let (za, a_cache) = self.anchor_att.forward_cached(&self.exec, &cur.z, &a_mem)?;
        let (zs, s_cache) = self.slide_att.forward_cached(&self.exec, &cur.z, &s_mem)?;
        let mut cond = za;
        cond.extend(zs);
        cond.extend_from_slice(self.text_latent(s.text));
        cond.extend(self.proprio(s.last_action, s.counter));

        let target = self.target_chunk(&s.chunk);
        let diff = ddpm_loss(&self.denoiser, &mut self.exec, &self.schedule, &target, &cond, seed, scale)?;
        let (logit, clf_cache) = self.classifier.forward_cached(&self.exec, &cond)?;
        let x = logit[0];
        let y = if s.end { 1.0 } else { 0.0 };
        let bce = softplus(x) - y * x;
        let out = SampleLoss { diffusion: diff.loss, classifier: bce, end_correct: (sigmoid(x) > CLASSIFIER_THRESHOLD) == s.end };
        if !(out.diffusion.is_finite() && out.classifier.is_finite()) {
            return Err(NnError::NonFinite("executor loss").into());
        }
        let Some(scale) = scale else { return Ok(out) };

        let g_clf = self.classifier.backward(&mut self.exec, &clf_cache, &[(sigmoid(x) - y) * scale]);
        let g_cond: Vec<f32> = diff.g_cond.iter().zip(&g_clf).map(|(a, b)| a + b).collect();
        let (g_za, rest) = g_cond.split_at(d);
        let (g_zs, rest) = rest.split_at(d);
        let g_zt = &rest[..d];
        let row = s.text * d;
        for (g, v) in self.exec.grad_mut(self.text)[row..row + d].iter_mut().zip(g_zt) {
            *g += v;
        }
        let (mut g_z, g_a) = self.anchor_att.backward(&mut self.exec, &a_cache, &cur.z, &a_mem, g_za);
        let (g_z2, g_s) = self.slide_att.backward(&mut self.exec, &s_cache, &cur.z, &s_mem, g_zs);
        g_z.iter_mut().zip(&g_z2).for_each(|(a, b)| *a += b);
        if let Some(enc) = &anchor {
            self.encode_backward(enc, &g_a[0]);
        }
        for (enc, g) in sliding.iter().zip(&g_s) {
            self.encode_backward(enc, g);
        }
        self.encode_backward(&cur, &g_z);
        Ok(out)
    }

    /// Cross-entropy of the planner on one sample, with optional gradients.
    /// Returns the loss and whether the argmax matched the label.
    pub fn planner_loss(&mut self, s: &PlanSample, use_key: bool, scale: Option<f32>) -> Result<(f32, bool), PolicyError> {
        let (pooled, caches) = self.pooled_key(&s.key, use_key)?;
        let mut input = s.o0.clone();
        input.extend_from_slice(self.plan.value(self.goal));
        input.extend_from_slice(&pooled);
        let (logits, cache) = self.planner_head.forward_cached(&self.plan, &input)?;
        let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let z: f32 = logits.iter().map(|l| (l - max).exp()).sum();
        let loss = max + z.ln() - logits[s.label];
        let best = (0..logits.len()).fold(0, |b, i| if logits[i] > logits[b] { i } else { b });
        if !loss.is_finite() {
            return Err(NnError::NonFinite("planner loss").into());
        }
        let Some(scale) = scale else { return Ok((loss, best == s.label)) };
        let g: Vec<f32> = logits
            .iter()
            .enumerate()
            .map(|(i, l)| ((l - max).exp() / z - if i == s.label { 1.0 } else { 0.0 }) * scale)
            .collect();
        let g_in = self.planner_head.backward(&mut self.plan, &cache, &g);
        let o = self.dims.feature_dim;
        let dz = self.config.d_z;
        for (gg, v) in self.plan.grad_mut(self.goal).iter_mut().zip(&g_in[o..o + dz]) {
            *gg += v;
        }
        let g_pool = &g_in[o + dz..];
        for (i, (_, c)) in caches.iter().enumerate() {
            let w = self.key_weight(i);
            let gf: Vec<f32> = g_pool.iter().map(|v| v * w).collect();
            self.key_mlp.backward(&mut self.plan, c, &gf);
        }
        Ok((loss, best == s.label))
    }

    /// Executor examples from demonstrations, with memories masked as the
    /// config's ablations dictate.
    pub fn exec_samples(&self, task: &dyn Task, demos: &[Demonstration]) -> Vec<ExecSample> {
        let ab = self.config.ablations;
        let k = self.config.sliding_capacity;
        let h = self.config.horizon;
        let mut out = Vec::new();
        for demo in demos {
            let feats: Vec<Vec<f32>> = demo.steps.iter().map(|s| featurize(task, &s.obs)).collect();
            let n = demo.steps.len();
            let mut start = 0;
            for t in 0..n {
                let end_of_segment = |t: usize| if self.dims.decomposed { demo.steps[t].end_flag || t + 1 == n } else { t + 1 == n };
                let mut last = t;
                while !end_of_segment(last) {
                    last += 1;
                }
                let chunk = (0..h).map(|i| demo.steps[(t + i).min(last)].action).collect();
                out.push(ExecSample {
                    current: feats[t].clone(),
                    anchor: ab.anchor().then(|| feats[start].clone()),
                    sliding: if ab.sliding() { feats[t.saturating_sub(k).max(start)..t].to_vec() } else { Vec::new() },
                    text: self.text_id(demo.steps[t].subtask),
                    last_action: t.checked_sub(1).map(|p| demo.steps[p].action),
                    counter: t - start,
                    chunk,
                    end: if self.dims.decomposed { demo.steps[t].end_flag } else { t + 1 == n },
                });
                if end_of_segment(t) {
                    start = t + 1;
                }
            }
        }
        out
    }

    /// Planner examples: one per subtask segment of every demonstration.
    pub fn plan_samples(&self, task: &dyn Task, demos: &[Demonstration]) -> Vec<PlanSample> {
        let mut out = Vec::new();
        for demo in demos {
            let Some(first) = demo.steps.first() else { continue };
            let o0 = featurize(task, &first.obs);
            let mut key = Vec::new();
            let mut label = Some(first.subtask);
            for (t, s) in demo.steps.iter().enumerate() {
                if let Some(l) = label.take() {
                    out.push(PlanSample { o0: o0.clone(), key: key.clone(), label: l });
                }
                if s.end_flag && t + 1 < demo.steps.len() {
                    key.push((s.subtask, featurize(task, demo.next_obs(t))));
                    label = Some(demo.steps[t + 1].subtask);
                }
            }
        }
        out
    }

    /// Both stores in one weight file, executor first.
    pub fn weight_bytes(&self) -> Vec<u8> {
        params_to_bytes(&self.combined())
    }

    fn combined(&self) -> ParamStore<f32> {
        let mut all = ParamStore::new();
        for p in self.exec.params().iter().chain(self.plan.params()) {
            all.add(&p.name, p.value.clone()).expect("exec. and plan. names are disjoint");
        }
        all
    }

    /// Write the weight file and its JSON sidecar.
    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        save_params(&self.combined(), path)?;
        let sidecar = Sidecar { version: SIDECAR_VERSION, dims: self.dims.clone(), config: self.config.clone() };
        std::fs::write(super::sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }

    /// Rebuild the architecture from the sidecar and load the weights into it.
    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let sidecar: Sidecar = serde_json::from_slice(&std::fs::read(super::sidecar_path(path))?)?;
        if sidecar.version != SIDECAR_VERSION {
            return Err(PolicyError::Config(format!("sidecar version {} unsupported", sidecar.version)));
        }
        let mut model = Self::new(sidecar.dims, sidecar.config, 0)?;
        let loaded = load_params(path)?;
        let (mut exec, mut plan) = (ParamStore::new(), ParamStore::new());
        for p in loaded.params() {
            let target = if p.name.starts_with(EXEC_PREFIX) {
                &mut exec
            } else if p.name.starts_with(PLAN_PREFIX) {
                &mut plan
            } else {
                return Err(NnError::ShapeTable { name: p.name.clone(), problem: "not part of this architecture".into() }.into());
            };
            target.add(&p.name, p.value.clone())?;
        }
        crate::nn::copy_matching(&mut model.exec, &exec)?;
        crate::nn::copy_matching(&mut model.plan, &plan)?;
        Ok(model)
    }

    /// Copy the executor weights of `other` (same architecture).
    pub fn replace_executor(&mut self, other: &Mem0Model) -> Result<(), PolicyError> {
        crate::nn::copy_matching(&mut self.exec, &other.exec)?;
        Ok(())
    }

    /// Copy the planner weights of `other` (same architecture).
    pub fn replace_planner(&mut self, other: &Mem0Model) -> Result<(), PolicyError> {
        crate::nn::copy_matching(&mut self.plan, &other.plan)?;
        Ok(())
    }
}

fn proprio_dim(dims: &TaskDims) -> usize {
    dims.action_count + 2
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f32) -> f32 {
    if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() }
}
