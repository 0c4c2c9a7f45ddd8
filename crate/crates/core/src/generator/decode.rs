use std::cmp::Ordering;

use super::{GenError, GenState, Generator};
use crate::rng::SeededRng;
use crate::textdata::{Caption, TokenId, EOS};

/// One decoded caption with the log-probabilities of its tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    pub caption: Caption,
    /// Left-to-right sum of `per_step_log_probs`.
    pub log_prob: f64,
    pub per_step_log_probs: Vec<f64>,
}

impl DecodeResult {
    fn new(ids: Vec<TokenId>, per_step: Vec<f64>) -> Self {
        let log_prob = sum_in_order(&per_step);
        Self { caption: Caption::from_ids(ids), log_prob, per_step_log_probs: per_step }
    }
}

fn sum_in_order(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0, |acc, x| acc + x)
}

/// Lowest index among the maxima.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

fn draw(log_probs: &[f64], rng: &mut SeededRng) -> usize {
    let u = rng.uniform();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, lp) in log_probs.iter().enumerate() {
        let p = lp.exp();
        if p > 0.0 {
            last_positive = i;
        }
        cum += p;
        if u < cum {
            return i;
        }
    }
    last_positive
}

enum Pick<'a> {
    Greedy,
    Sample(&'a mut SeededRng),
}

/// Free-running decoding of a batch, one column per feature. Finished
/// columns are dropped from the batch; batching never changes a column's
/// values.
fn run_batch(gen: &Generator, features: &[&[f64]], mut pick: Pick<'_>) -> Result<Vec<DecodeResult>, GenError> {
    let b = features.len();
    if b == 0 {
        return Ok(Vec::new());
    }
    let mut ids: Vec<Vec<TokenId>> = vec![Vec::new(); b];
    let mut lps: Vec<Vec<f64>> = vec![Vec::new(); b];
    let (mut log_probs, mut state) = gen.start_batch(features)?;
    let mut live: Vec<usize> = (0..b).collect();
    for step in 0..gen.t_max() {
        let mut tokens = Vec::with_capacity(live.len());
        let mut keep = Vec::with_capacity(live.len());
        for (col, &row) in live.iter().enumerate() {
            let lp = &log_probs[col];
            let tok = match &mut pick {
                Pick::Greedy => argmax(lp),
                Pick::Sample(rng) => draw(lp, rng),
            };
            ids[row].push(tok);
            lps[row].push(lp[tok]);
            if tok != EOS {
                keep.push(col);
                tokens.push(tok);
            }
        }
        if keep.is_empty() || step + 1 == gen.t_max() {
            break;
        }
        if keep.len() != live.len() {
            state = state.select(&keep);
            live = keep.iter().map(|&c| live[c]).collect();
        }
        let (next_lp, next_state) = gen.advance_batch(&state, &tokens)?;
        log_probs = next_lp;
        state = next_state;
    }
    Ok(ids.into_iter().zip(lps).map(|(i, l)| DecodeResult::new(i, l)).collect())
}

/// Draws each token from the softmax (temperature 1) until EOS or `T_max`.
pub fn sample_sequence(gen: &Generator, feature: &[f64], rng: &mut SeededRng) -> Result<DecodeResult, GenError> {
    Ok(run_batch(gen, &[feature], Pick::Sample(rng))?.remove(0))
}

/// Independent samples for a batch of features.
pub fn sample_batch(gen: &Generator, features: &[&[f64]], rng: &mut SeededRng) -> Result<Vec<DecodeResult>, GenError> {
    run_batch(gen, features, Pick::Sample(rng))
}

/// Argmax decoding; ties go to the lower token id.
pub fn greedy_decode(gen: &Generator, feature: &[f64]) -> Result<DecodeResult, GenError> {
    Ok(run_batch(gen, &[feature], Pick::Greedy)?.remove(0))
}

pub fn greedy_batch(gen: &Generator, features: &[&[f64]]) -> Result<Vec<DecodeResult>, GenError> {
    run_batch(gen, features, Pick::Greedy)
}

/// Teacher-forced log-probabilities of a given token sequence.
pub fn score_sequence(gen: &Generator, feature: &[f64], ids: &[TokenId]) -> Result<DecodeResult, GenError> {
    if ids.is_empty() || ids.len() > gen.t_max() {
        return Err(GenError::Config(format!("sequence length {} outside 1..={}", ids.len(), gen.t_max())));
    }
    let (mut lp, mut state) = gen.start_batch(&[feature])?;
    let mut per_step = Vec::with_capacity(ids.len());
    for (t, &tok) in ids.iter().enumerate() {
        if tok >= gen.vocab_size() {
            return Err(GenError::Config(format!("token {tok} outside the vocabulary")));
        }
        per_step.push(lp[0][tok]);
        if t + 1 < ids.len() {
            let (next, s) = gen.advance_batch(&state, &[tok])?;
            lp = next;
            state = s;
        }
    }
    Ok(DecodeResult::new(ids.to_vec(), per_step))
}

/// A left-to-right model that beam search can drive.
pub trait StepModel {
    type State: Clone;

    fn vocab_size(&self) -> usize;
    fn t_max(&self) -> usize;
    /// Log-probabilities of the first token and the state after BOS.
    fn start(&self, feature: &[f64]) -> Result<(Vec<f64>, Self::State), GenError>;
    /// Advances several hypotheses at once, one token each.
    fn advance(&self, states: &[&Self::State], tokens: &[TokenId]) -> Result<Vec<(Vec<f64>, Self::State)>, GenError>;
}

impl StepModel for Generator {
    type State = GenState;

    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn t_max(&self) -> usize {
        self.config.t_max
    }

    fn start(&self, feature: &[f64]) -> Result<(Vec<f64>, GenState), GenError> {
        let (mut lp, state) = self.start_batch(&[feature])?;
        Ok((lp.remove(0), state))
    }

    fn advance(&self, states: &[&GenState], tokens: &[TokenId]) -> Result<Vec<(Vec<f64>, GenState)>, GenError> {
        let stacked = GenState::stack(states);
        let (lps, next) = self.advance_batch(&stacked, tokens)?;
        Ok(lps.into_iter().enumerate().map(|(c, lp)| (lp, next.column(c))).collect())
    }
}

/// Several generators decoded jointly; each step's log-probability is the
/// mean of the members' log-softmax outputs.
pub struct Ensemble<'a> {
    members: Vec<&'a Generator>,
}

impl<'a> Ensemble<'a> {
    pub fn new(members: Vec<&'a Generator>) -> Result<Self, GenError> {
        let first = members.first().ok_or_else(|| GenError::Config("empty ensemble".into()))?;
        for m in &members {
            if m.config.vocab_size != first.config.vocab_size {
                return Err(GenError::Config(format!(
                    "ensemble members disagree on vocabulary size ({} vs {})",
                    m.config.vocab_size, first.config.vocab_size
                )));
            }
            if m.config.t_max != first.config.t_max {
                return Err(GenError::Config("ensemble members disagree on t_max".into()));
            }
        }
        Ok(Self { members })
    }

    /// Mean written as `m0 + sum(m_i - m0) / k`, which returns `m0` exactly
    /// when all members agree.
    fn combine(&self, per_model: &[Vec<f64>]) -> Vec<f64> {
        let k = per_model.len() as f64;
        let base = &per_model[0];
        (0..base.len())
            .map(|j| {
                let spread = per_model.iter().fold(0.0, |acc, lp| acc + (lp[j] - base[j]));
                base[j] + spread / k
            })
            .collect()
    }
}

impl StepModel for Ensemble<'_> {
    type State = Vec<GenState>;

    fn vocab_size(&self) -> usize {
        self.members[0].config.vocab_size
    }

    fn t_max(&self) -> usize {
        self.members[0].config.t_max
    }

    fn start(&self, feature: &[f64]) -> Result<(Vec<f64>, Vec<GenState>), GenError> {
        let mut lps = Vec::with_capacity(self.members.len());
        let mut states = Vec::with_capacity(self.members.len());
        for m in &self.members {
            let (lp, s) = StepModel::start(*m, feature)?;
            lps.push(lp);
            states.push(s);
        }
        Ok((self.combine(&lps), states))
    }

    fn advance(&self, states: &[&Vec<GenState>], tokens: &[TokenId]) -> Result<Vec<(Vec<f64>, Vec<GenState>)>, GenError> {
        let n = states.len();
        let mut per_hyp_lps: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];
        let mut per_hyp_states: Vec<Vec<GenState>> = vec![Vec::new(); n];
        for (mi, m) in self.members.iter().enumerate() {
            let cols: Vec<&GenState> = states.iter().map(|s| &s[mi]).collect();
            for (h, (lp, s)) in m.advance(&cols, tokens)?.into_iter().enumerate() {
                per_hyp_lps[h].push(lp);
                per_hyp_states[h].push(s);
            }
        }
        Ok(per_hyp_lps.iter().map(|lps| self.combine(lps)).zip(per_hyp_states).collect())
    }
}

struct Hyp<S> {
    ids: Vec<TokenId>,
    per_step: Vec<f64>,
    score: f64,
    state: S,
}

/// Higher score first, then the lexicographically smaller path.
fn rank(a_score: f64, a_ids: &[TokenId], b_score: f64, b_ids: &[TokenId]) -> Ordering {
    b_score.partial_cmp(&a_score).unwrap_or(Ordering::Equal).then_with(|| a_ids.cmp(b_ids))
}

/// Length-unnormalized beam search over summed log-probabilities.
///
/// Each step keeps the best `beam` of all expansions. Expansions ending in
/// EOS, and hypotheses reaching `T_max`, retire to a pool; the search stops
/// once nothing live can beat the pool's best (scores only decrease).
pub fn beam_search_model<M: StepModel>(model: &M, feature: &[f64], beam: usize) -> Result<DecodeResult, GenError> {
    if beam < 1 {
        return Err(GenError::Config("beam must be at least 1".into()));
    }
    let (lp0, s0) = model.start(feature)?;
    let mut live = vec![Hyp { ids: Vec::new(), per_step: Vec::new(), score: 0.0, state: s0 }];
    let mut expansions = vec![lp0];
    let mut pool: Vec<(Vec<TokenId>, Vec<f64>, f64)> = Vec::new();
    let u = model.vocab_size();
    for step in 0..model.t_max() {
        // (score, parent, token) for every expansion.
        let mut cands: Vec<(f64, usize, TokenId)> = Vec::with_capacity(live.len() * u);
        for (p, (hyp, lp)) in live.iter().zip(&expansions).enumerate() {
            for (tok, &l) in lp.iter().enumerate() {
                cands.push((hyp.score + l, p, tok));
            }
        }
        let path = |c: &(f64, usize, TokenId)| {
            let mut ids = live[c.1].ids.clone();
            ids.push(c.2);
            ids
        };
        cands.sort_by(|a, b| {
            b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| {
                let (pa, pb) = (&live[a.1].ids, &live[b.1].ids);
                pa.cmp(pb).then(a.2.cmp(&b.2))
            })
        });
        cands.truncate(beam);
        let last = step + 1 == model.t_max();
        let mut next_parents = Vec::new();
        let mut next_tokens = Vec::new();
        let mut next_meta = Vec::new();
        for c in &cands {
            let ids = path(c);
            let mut per_step = live[c.1].per_step.clone();
            per_step.push(expansions[c.1][c.2]);
            if c.2 == EOS || last {
                pool.push((ids, per_step, c.0));
            } else {
                next_parents.push(c.1);
                next_tokens.push(c.2);
                next_meta.push((ids, per_step, c.0));
            }
        }
        if next_meta.is_empty() {
            break;
        }
        let best_pool = pool.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
        if best_pool >= next_meta[0].2 {
            break;
        }
        let parent_states: Vec<&M::State> = next_parents.iter().map(|&p| &live[p].state).collect();
        let advanced = model.advance(&parent_states, &next_tokens)?;
        let mut new_live = Vec::with_capacity(advanced.len());
        expansions = Vec::with_capacity(advanced.len());
        for ((lp, state), (ids, per_step, score)) in advanced.into_iter().zip(next_meta) {
            expansions.push(lp);
            new_live.push(Hyp { ids, per_step, score, state });
        }
        live = new_live;
    }
    let best = pool
        .into_iter()
        .min_by(|a, b| rank(a.2, &a.0, b.2, &b.0))
        .expect("the pool receives every hypothesis alive at T_max");
    Ok(DecodeResult::new(best.0, best.1))
}

pub fn beam_search(gen: &Generator, feature: &[f64], beam: usize) -> Result<DecodeResult, GenError> {
    beam_search_model(gen, feature, beam)
}

pub fn ensemble_decode(members: &[&Generator], feature: &[f64], beam: usize) -> Result<DecodeResult, GenError> {
    let ens = Ensemble::new(members.to_vec())?;
    beam_search_model(&ens, feature, beam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::GenConfig;

    fn model(seed: u64, u: usize, t_max: usize) -> Generator {
        let cfg = GenConfig { vocab_size: u, feature_dim: 3, hidden: 5, t_max };
        Generator::init(cfg, &mut SeededRng::from_seed(seed), 0.8).unwrap()
    }

    fn force_eos(g: &mut Generator) {
        let u = g.config.vocab_size;
        let b = g.params.tensor_mut(super::super::OUT_BIAS).data_mut();
        b.fill(0.0);
        b[EOS] = 100.0;
        let _ = u;
    }

    #[test]
    fn forced_eos() {
        let mut g = model(1, 6, 5);
        force_eos(&mut g);
        let f = [0.3, 0.1, -0.2];
        assert_eq!(greedy_decode(&g, &f).unwrap().caption.ids, vec![EOS]);
        let mut rng = SeededRng::from_seed(9);
        assert_eq!(sample_sequence(&g, &f, &mut rng).unwrap().caption.ids, vec![EOS]);
        assert_eq!(beam_search(&g, &f, 3).unwrap().caption.ids, vec![EOS]);
    }

    #[test]
    fn results_rescore_exactly() {
        let g = model(2, 6, 6);
        let f = [0.5, -0.1, 0.9];
        let mut rng = SeededRng::from_seed(4);
        for r in [
            greedy_decode(&g, &f).unwrap(),
            sample_sequence(&g, &f, &mut rng).unwrap(),
            beam_search(&g, &f, 4).unwrap(),
        ] {
            let s = score_sequence(&g, &f, &r.caption.ids).unwrap();
            assert_eq!(s.log_prob.to_bits(), r.log_prob.to_bits());
            assert_eq!(s.per_step_log_probs, r.per_step_log_probs);
            assert!(r.caption.len() <= g.t_max());
        }
    }

    #[test]
    fn batched_decoding_matches_single() {
        let g = model(3, 6, 6);
        let fs: Vec<[f64; 3]> = (0..5).map(|i| [i as f64 * 0.3, -0.2, 0.1 * i as f64]).collect();
        let refs: Vec<&[f64]> = fs.iter().map(|f| f.as_slice()).collect();
        let batch = greedy_batch(&g, &refs).unwrap();
        for (f, r) in refs.iter().zip(&batch) {
            assert_eq!(&greedy_decode(&g, f).unwrap(), r);
        }
    }

    #[test]
    fn beam_zero_rejected() {
        let g = model(3, 6, 6);
        assert!(matches!(beam_search(&g, &[0.0; 3], 0), Err(GenError::Config(_))));
    }

    #[test]
    fn ensemble_rejects_mismatched_vocab() {
        let a = model(1, 6, 4);
        let b = model(1, 7, 4);
        assert!(matches!(ensemble_decode(&[&a, &b], &[0.0; 3], 2), Err(GenError::Config(_))));
    }
}
