use serde::{Deserialize, Serialize};

use super::DiscError;
use crate::numcore::{init_uniform, ParamSet, Tape, Tensor, Var};
use crate::rng::SeededRng;
use crate::textdata::TokenId;

/// Convolution groups as `(window, count)` pairs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub groups: Vec<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelPreset {
    Desk,
    Full,
}

impl KernelSpec {
    /// 64 kernels over windows 1 to 5.
    pub fn desk() -> Self {
        Self { groups: vec![(1, 8), (2, 16), (3, 16), (4, 16), (5, 8)] }
    }

    /// The 1,720-kernel bank with windows up to 16.
    pub fn full() -> Self {
        Self {
            groups: vec![
                (1, 100),
                (2, 200),
                (3, 200),
                (4, 200),
                (5, 200),
                (6, 100),
                (7, 100),
                (8, 100),
                (9, 100),
                (10, 100),
                (15, 160),
                (16, 160),
            ],
        }
    }

    pub fn preset(p: KernelPreset) -> Self {
        match p {
            KernelPreset::Desk => Self::desk(),
            KernelPreset::Full => Self::full(),
        }
    }

    pub fn total(&self) -> usize {
        self.groups.iter().map(|g| g.1).sum()
    }

    /// Windows must fit the `T_max + 1` wide feature map.
    pub fn validate(&self, t_max: usize) -> Result<(), DiscError> {
        if self.groups.is_empty() {
            return Err(DiscError::Spec("kernel spec has no groups".into()));
        }
        for &(w, n) in &self.groups {
            if w == 0 || n == 0 {
                return Err(DiscError::Spec(format!("kernel group ({w}, {n}) must be positive")));
            }
            if w > t_max + 1 {
                return Err(DiscError::Spec(format!("kernel window {w} exceeds feature map width {}", t_max + 1)));
            }
        }
        Ok(())
    }
}

/// Intermediate values of one CNN forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct CnnForwardTrace {
    /// `d x (T_max + 1)`.
    pub eps: Tensor,
    /// One `count x positions` map per kernel group.
    pub feature_maps: Vec<Tensor>,
    pub pooled: Vec<f64>,
    pub gate: Vec<f64>,
    pub transform: Vec<f64>,
    pub highway: Vec<f64>,
    pub p: f64,
}

/// Slot layout of the CNN parameter set.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct CnnLayout {
    pub spec: KernelSpec,
}

pub(crate) const CNN_EMBED: usize = 0;

impl CnnLayout {
    pub fn init(&self, d: usize, u: usize, rng: &mut SeededRng, scale: f64) -> ParamSet {
        let n = self.spec.total();
        let mut p = ParamSet::new();
        p.push("cnn.embed", init_uniform(rng, &[d, u], scale));
        for &(w, count) in &self.spec.groups {
            p.push(format!("cnn.conv{w}.kernels"), init_uniform(rng, &[count, d * w], scale));
            p.push(format!("cnn.conv{w}.bias"), Tensor::zeros(&[count]));
        }
        p.push("cnn.highway.w_t", init_uniform(rng, &[n, n], scale));
        p.push("cnn.highway.b_t", Tensor::zeros(&[n]));
        p.push("cnn.highway.w_h", init_uniform(rng, &[n, n], scale));
        p.push("cnn.highway.b_h", Tensor::zeros(&[n]));
        p.push("cnn.out.w", init_uniform(rng, &[1, n], scale));
        p.push("cnn.out.b", Tensor::zeros(&[1]));
        p
    }

    fn highway_slot(&self) -> usize {
        1 + 2 * self.spec.groups.len()
    }

    /// `1 x B` probabilities for `B` columns of features and padded captions.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], features: &Tensor, captions: &[Vec<TokenId>]) -> Result<Var, DiscError> {
        let pooled = self.pooled_columns(tape, vars, features, captions)?;
        let cols: Vec<Var> = pooled.iter().map(|p| p.1).collect();
        let c = tape.concat_cols(&cols)?;
        let (_, _, highway) = self.highway(tape, vars, c)?;
        let hs = self.highway_slot();
        let z = tape.matmul(vars[hs + 4], highway)?;
        let z = tape.add_col_bias(z, vars[hs + 5])?;
        Ok(tape.sigmoid(z))
    }

    /// Per column: the feature maps and the pooled vector `c̃`.
    fn pooled_columns(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        features: &Tensor,
        captions: &[Vec<TokenId>],
    ) -> Result<Vec<(Vec<Var>, Var, Var)>, DiscError> {
        let (d, b) = features.dims2();
        if captions.len() != b {
            return Err(DiscError::Config(format!("{} captions for {b} feature columns", captions.len())));
        }
        let mut out = Vec::with_capacity(b);
        for (col, caption) in captions.iter().enumerate() {
            let v: Vec<f64> = (0..d).map(|r| features.data()[r * b + col]).collect();
            let v = tape.constant(Tensor::matrix(d, 1, v)?);
            let words = tape.gather_cols(vars[CNN_EMBED], caption)?;
            let eps = tape.concat_cols(&[v, words])?;
            let mut maps = Vec::with_capacity(self.spec.groups.len());
            let mut pooled = Vec::with_capacity(self.spec.groups.len());
            for (g, &(w, _)) in self.spec.groups.iter().enumerate() {
                let map = tape.conv_bank(eps, vars[1 + 2 * g], vars[2 + 2 * g], w)?;
                pooled.push(tape.max_over_time_rows(map)?);
                maps.push(map);
            }
            let c = tape.concat_rows(&pooled)?;
            out.push((maps, c, eps));
        }
        Ok(out)
    }

    /// Returns `(τ, H, C̃)`.
    fn highway(&self, tape: &mut Tape, vars: &[Var], c: Var) -> Result<(Var, Var, Var), DiscError> {
        let hs = self.highway_slot();
        let t = tape.matmul(vars[hs], c)?;
        let t = tape.add_col_bias(t, vars[hs + 1])?;
        let gate = tape.sigmoid(t);
        let h = tape.matmul(vars[hs + 2], c)?;
        let h = tape.add_col_bias(h, vars[hs + 3])?;
        let transform = tape.relu(h);
        let carry = tape.affine(gate, -1.0, 1.0);
        let moved = tape.mul(gate, transform)?;
        let kept = tape.mul(carry, c)?;
        let out = tape.add(moved, kept)?;
        Ok((gate, transform, out))
    }

    pub fn trace(&self, params: &ParamSet, feature: &[f64], caption: &[TokenId]) -> Result<CnnForwardTrace, DiscError> {
        let mut tape = Tape::new();
        let vars = params.bind_frozen(&mut tape);
        let feats = Tensor::matrix(feature.len(), 1, feature.to_vec())?;
        let mut cols = self.pooled_columns(&mut tape, &vars, &feats, &[caption.to_vec()])?;
        let (maps, c, eps) = cols.remove(0);
        let (gate, transform, highway) = self.highway(&mut tape, &vars, c)?;
        let hs = self.highway_slot();
        let z = tape.matmul(vars[hs + 4], highway)?;
        let z = tape.add_col_bias(z, vars[hs + 5])?;
        let p = tape.sigmoid(z);
        let vec_of = |v: Var| tape.value(v).data().to_vec();
        Ok(CnnForwardTrace {
            eps: tape.value(eps).clone(),
            feature_maps: maps.iter().map(|&m| tape.value(m).clone()).collect(),
            pooled: vec_of(c),
            gate: vec_of(gate),
            transform: vec_of(transform),
            highway: vec_of(highway),
            p: tape.value(p).data()[0],
        })
    }
}
