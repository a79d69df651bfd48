//! Synthetic ground truth and simulated concept predictors, plus a
//! line-delimited JSON record format for external model outputs.

use std::borrow::Cow;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::{check_probability_vector, FactorizedConceptDistribution};
use crate::error::{Error, Result};
use crate::knowledge::KnowledgeTable;

/// Smallest temperature used as a divisor; `0` means a hard one-hot.
pub const MIN_TEMPERATURE: f64 = 1e-9;

/// Noise model for one concept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptNoise {
    pub temperature: f64,
    /// Standard deviation of Gaussian noise added to each logit per record.
    #[serde(default)]
    pub logit_noise: f64,
    /// `shortcut[v]` is the value the predictor concentrates on when the
    /// truth is `v`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shortcut: Option<Vec<usize>>,
    /// `confusion[v]` replaces the one-hot logit at target `v` with `ln confusion[v]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<Vec<Vec<f64>>>,
}

impl ConceptNoise {
    pub fn temperature(temperature: f64) -> Self {
        Self { temperature, logit_noise: 0.0, shortcut: None, confusion: None }
    }

    pub fn with_logit_noise(mut self, sigma: f64) -> Self {
        self.logit_noise = sigma;
        self
    }

    pub fn with_shortcut(mut self, permutation: Vec<usize>) -> Self {
        self.shortcut = Some(permutation);
        self
    }

    fn validate(&self, j: usize, values: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("concept {j}: {m}")));
        if !(self.temperature >= 0.0) || self.temperature.is_infinite() {
            return bad(format!("temperature {} must be finite and >= 0", self.temperature));
        }
        if !(self.logit_noise >= 0.0) || self.logit_noise.is_infinite() {
            return bad(format!("logit noise {} must be finite and >= 0", self.logit_noise));
        }
        if let Some(pi) = &self.shortcut {
            let mut seen = vec![false; values];
            if pi.len() != values || pi.iter().any(|&v| v >= values || std::mem::replace(&mut seen[v], true)) {
                return bad(format!("shortcut {pi:?} is not a permutation of 0..{values}"));
            }
        }
        if let Some(rows) = &self.confusion {
            if rows.len() != values {
                return bad(format!("confusion has {} rows, expected {values}", rows.len()));
            }
            for (v, row) in rows.iter().enumerate() {
                if row.len() != values {
                    return bad(format!("confusion row {v} has {} entries", row.len()));
                }
                check_probability_vector(row, &format!("concept {j} confusion row {v}"))?;
            }
        }
        Ok(())
    }

    fn probs(&self, truth: usize, values: usize, rng: &mut impl Rng) -> Vec<f64> {
        let target = self.shortcut.as_ref().map_or(truth, |pi| pi[truth]);
        let scale = 1.0 / self.temperature.max(MIN_TEMPERATURE);
        let mut logits: Vec<f64> = match &self.confusion {
            Some(rows) => rows[target].iter().map(|p| p.ln()).collect(),
            None => (0..values).map(|v| (v == target) as u8 as f64).collect(),
        };
        for l in &mut logits {
            let z: f64 = if self.logit_noise > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
            *l = (*l + self.logit_noise * z) * scale;
        }
        softmax(&logits)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedVector {
    pub c: Vec<usize>,
    pub weight: f64,
}

/// Distribution of ground-truth concept vectors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ConceptPrior {
    /// Uniform over every vector; fails if any vector entails nothing.
    Uniform,
    /// Uniform over vectors that entail at least one label.
    #[default]
    UniformFeasible,
    /// One weight per concept-vector index.
    Weights { weights: Vec<f64> },
    /// Weights on listed vectors, zero elsewhere.
    Sparse { support: Vec<WeightedVector> },
}

/// What to do when the ground-truth concept vector deduces several labels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TiePolicy {
    /// Redraw the concept vector, i.e. condition the prior on unique deduction.
    #[default]
    Resample,
    /// Draw the label from the row's weights.
    SplitMass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorSpec {
    /// One entry per concept.
    pub concepts: Vec<ConceptNoise>,
    #[serde(default)]
    pub prior: ConceptPrior,
    #[serde(default)]
    pub ties: TiePolicy,
}

impl PredictorSpec {
    /// The same noise model for each of `k` concepts.
    pub fn uniform(k: usize, noise: ConceptNoise) -> Self {
        Self { concepts: vec![noise; k], prior: ConceptPrior::default(), ties: TiePolicy::default() }
    }

    pub fn with_prior(mut self, prior: ConceptPrior) -> Self {
        self.prior = prior;
        self
    }

    pub fn with_ties(mut self, ties: TiePolicy) -> Self {
        self.ties = ties;
        self
    }

    pub fn validate(&self, kt: &KnowledgeTable) -> Result<()> {
        let space = kt.concept_space();
        if self.concepts.len() != space.k() {
            return Err(Error::InvalidArgument(format!(
                "predictor describes {} concepts, knowledge has {}",
                self.concepts.len(),
                space.k()
            )));
        }
        for (j, n) in self.concepts.iter().enumerate() {
            n.validate(j, space.domain_size(j))?;
        }
        Ok(())
    }
}

/// One example as probability summaries plus ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleRecord {
    pub id: String,
    pub concept_probs: FactorizedConceptDistribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_star: Option<Vec<usize>>,
    pub y_star: usize,
}

impl ExampleRecord {
    /// Stored label distribution, or the marginal under `kt` when absent.
    pub fn label_probs<'a>(&'a self, kt: &KnowledgeTable) -> Result<Cow<'a, [f64]>> {
        match &self.label_probs {
            Some(p) => Ok(Cow::Borrowed(p)),
            None => Ok(Cow::Owned(kt.marginal_label_distribution(&self.concept_probs)?)),
        }
    }
}

/// Cumulative prior over concept indices after applying the tie policy.
fn prior_cdf(kt: &KnowledgeTable, spec: &PredictorSpec) -> Result<Vec<f64>> {
    let space = kt.concept_space();
    space.check_cap(kt.cap())?;
    let total = space.total_size();
    let feasible = |i: usize| !kt.deduced(i).is_empty();
    let mut w = match &spec.prior {
        ConceptPrior::Uniform => {
            if let Some(index) = (0..total).find(|&i| !feasible(i)) {
                return Err(Error::InfeasiblePrior { index });
            }
            vec![1.0; total]
        }
        ConceptPrior::UniformFeasible => (0..total).map(|i| feasible(i) as u8 as f64).collect(),
        ConceptPrior::Weights { weights } => {
            if weights.len() != total {
                return Err(Error::InvalidArgument(format!(
                    "prior has {} weights, concept space has {total}",
                    weights.len()
                )));
            }
            weights.clone()
        }
        ConceptPrior::Sparse { support } => {
            let mut w = vec![0.0; total];
            for s in support {
                space.validate(&s.c)?;
                w[space.index_of(&s.c)] += s.weight;
            }
            w
        }
    };
    if let Some(x) = w.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::InvalidArgument(format!("prior weight {x}")));
    }
    if let Some(index) = (0..total).find(|&i| w[i] > 0.0 && !feasible(i)) {
        return Err(Error::InfeasiblePrior { index });
    }
    if spec.ties == TiePolicy::Resample {
        for (i, x) in w.iter_mut().enumerate() {
            if kt.deduced(i).len() > 1 {
                *x = 0.0;
            }
        }
    }
    let mut acc = 0.0;
    for x in &mut w {
        acc += *x;
        *x = acc;
    }
    if acc <= 0.0 {
        return Err(Error::InvalidArgument("prior has no mass on usable concept vectors".into()));
    }
    Ok(w)
}

fn sample_categorical(cdf: &[f64], rng: &mut impl Rng) -> usize {
    let u = rng.random::<f64>() * cdf[cdf.len() - 1];
    cdf.partition_point(|&x| x <= u).min(cdf.len() - 1)
}

/// Draws `n_cal + n_test` i.i.d. records and splits them in order.
/// Record `i` uses its own ChaCha stream, so the output does not depend on
/// thread scheduling.
pub fn generate(
    kt: &KnowledgeTable,
    spec: &PredictorSpec,
    n_cal: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Vec<ExampleRecord>, Vec<ExampleRecord>)> {
    spec.validate(kt)?;
    let cdf = prior_cdf(kt, spec)?;
    let space = kt.concept_space();
    let mut records = (0..n_cal + n_test)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let index = sample_categorical(&cdf, &mut rng);
            let row = kt.row(index);
            let y_star = match spec.ties {
                TiePolicy::Resample => kt.deduced(index)[0],
                TiePolicy::SplitMass => {
                    let mut acc = 0.0;
                    let row_cdf: Vec<f64> = row.iter().map(|w| {
                        acc += w;
                        acc
                    }).collect();
                    sample_categorical(&row_cdf, &mut rng)
                }
            };
            let c_star = space.vector_of(index).0;
            let factors = c_star
                .iter()
                .enumerate()
                .map(|(j, &v)| spec.concepts[j].probs(v, space.domain_size(j), &mut rng))
                .collect();
            let concept_probs = FactorizedConceptDistribution::new(factors)?;
            let label_probs = kt.marginal_label_distribution(&concept_probs)?;
            Ok(ExampleRecord {
                id: format!("{i:07}"),
                concept_probs,
                label_probs: Some(label_probs),
                c_star: Some(c_star),
                y_star,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let test = records.split_off(n_cal);
    Ok((records, test))
}

/// Writes one JSON record per line.
pub fn write_records<W: Write>(mut out: W, records: &[ExampleRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn check_record(r: &mut ExampleRecord, kt: &KnowledgeTable, strict: bool) -> Result<()> {
    let space = kt.concept_space();
    let m = kt.num_labels();
    let mismatch = |message: String| Error::DimensionMismatch { id: r.id.clone(), message };
    let sizes = r.concept_probs.domain_sizes();
    if sizes != space.domain_sizes() {
        return Err(mismatch(format!(
            "concept domains {sizes:?}, knowledge expects {:?}",
            space.domain_sizes()
        )));
    }
    if r.y_star >= m {
        return Err(mismatch(format!("y_star {} outside {m} labels", r.y_star)));
    }
    match &r.label_probs {
        Some(p) if p.len() != m => {
            return Err(mismatch(format!("{} label probabilities, expected {m}", p.len())));
        }
        Some(p) => check_probability_vector(p, &format!("record {} label_probs", r.id))?,
        None => r.label_probs = Some(kt.marginal_label_distribution(&r.concept_probs)?),
    }
    if let Some(c) = &r.c_star {
        if !space.contains(c) {
            return Err(mismatch(format!("c_star {c:?} outside domains {:?}", space.domain_sizes())));
        }
        if strict && kt.row(space.index_of(c))[r.y_star] <= 0.0 {
            return Err(Error::SupportViolation { id: r.id.clone(), c_star: c.clone(), y_star: r.y_star });
        }
    }
    Ok(())
}

/// Parses and validates a record stream. Blank lines are skipped; parse
/// errors carry the 1-based line number.
pub fn ingest<R: BufRead>(reader: R, kt: &KnowledgeTable, strict: bool) -> Result<Vec<ExampleRecord>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut r: ExampleRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: n + 1, message: e.to_string() })?;
        check_record(&mut r, kt, strict)?;
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::KnowledgeProgram;

    fn argmax(p: &[f64]) -> usize {
        (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b })
    }

    fn kt(program: KnowledgeProgram) -> KnowledgeTable {
        KnowledgeTable::compile(&program).unwrap()
    }

    #[test]
    fn zero_temperature_is_one_hot_at_truth() {
        let kt = kt(KnowledgeProgram::DigitSum { k: 2, base: 10 });
        let spec = PredictorSpec::uniform(2, ConceptNoise::temperature(0.0));
        let (cal, test) = generate(&kt, &spec, 50, 50, 3).unwrap();
        for r in cal.iter().chain(&test) {
            let c = r.c_star.as_ref().unwrap();
            for (j, &v) in c.iter().enumerate() {
                let p = r.concept_probs.factor(j);
                assert_eq!(p[v], 1.0);
                assert_eq!(p.iter().sum::<f64>(), 1.0);
            }
            assert_eq!(r.y_star, c[0] + c[1]);
            assert_eq!(r.label_probs.as_ref().unwrap()[r.y_star], 1.0);
        }
    }

    #[test]
    fn huge_temperature_is_uniform() {
        let kt = kt(KnowledgeProgram::DigitSum { k: 2, base: 10 });
        let spec = PredictorSpec::uniform(2, ConceptNoise::temperature(1e12));
        let (_, test) = generate(&kt, &spec, 0, 20, 1).unwrap();
        for r in &test {
            for p in r.concept_probs.factors() {
                assert!(p.iter().all(|x| (x - 0.1).abs() < 1e-9));
            }
        }
    }

    #[test]
    fn parity_preserving_shortcut() {
        let kt = kt(KnowledgeProgram::SumParity { k: 2, base: 10 });
        // swaps 0<->2 and 5<->7; fixed points are the other six digits
        let pi = vec![2, 1, 0, 3, 4, 7, 6, 5, 8, 9];
        assert!((0..10).all(|v| pi[v] % 2 == v % 2));
        let fixed = (0..10).filter(|&v| pi[v] == v).count();
        assert_eq!(fixed, 6);
        let spec = PredictorSpec::uniform(2, ConceptNoise::temperature(0.0).with_shortcut(pi.clone()));
        let (_, test) = generate(&kt, &spec, 0, 4000, 11).unwrap();
        let mut label_hits = 0;
        let mut concept_hits = 0;
        let mut fixed_truths = 0;
        for r in &test {
            let c = r.c_star.as_ref().unwrap();
            label_hits += (argmax(r.label_probs.as_ref().unwrap()) == r.y_star) as usize;
            for (j, &v) in c.iter().enumerate() {
                concept_hits += (argmax(r.concept_probs.factor(j)) == v) as usize;
                fixed_truths += (pi[v] == v) as usize;
            }
        }
        assert_eq!(label_hits, test.len());
        assert_eq!(concept_hits, fixed_truths);
        let acc = concept_hits as f64 / (2 * test.len()) as f64;
        assert!((acc - 0.6).abs() < 0.03, "{acc}");
    }

    #[test]
    fn generation_is_deterministic_and_prefix_stable() {
        let kt = kt(KnowledgeProgram::DigitSum { k: 2, base: 10 });
        let spec = PredictorSpec::uniform(2, ConceptNoise::temperature(1.0).with_logit_noise(1.0));
        let a = generate(&kt, &spec, 30, 70, 9).unwrap();
        let b = generate(&kt, &spec, 30, 70, 9).unwrap();
        assert_eq!(a, b);
        let c = generate(&kt, &spec, 60, 40, 9).unwrap();
        assert_eq!(a.0[..], c.0[..30]);
        let d = generate(&kt, &spec, 30, 70, 10).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn prior_errors() {
        let kt = kt(KnowledgeProgram::AttributeRules(crate::knowledge::AttributeRules::cifar10()));
        let spec = PredictorSpec::uniform(7, ConceptNoise::temperature(1.0)).with_prior(ConceptPrior::Uniform);
        assert!(matches!(generate(&kt, &spec, 1, 1, 0), Err(Error::InfeasiblePrior { .. })));
        let bad_pi = PredictorSpec::uniform(7, ConceptNoise::temperature(1.0).with_shortcut(vec![0, 0]));
        assert!(matches!(generate(&kt, &bad_pi, 1, 1, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn split_mass_draws_labels_from_row() {
        let rules = crate::knowledge::AttributeRules {
            num_attributes: 1,
            num_labels: 2,
            rules: vec![crate::knowledge::AttributeRule { labels: vec![0, 1], require: vec![], forbid: vec![] }],
            unmatched: Default::default(),
            attribute_names: vec![],
            label_names: vec![],
        };
        let kt = kt(KnowledgeProgram::AttributeRules(rules));
        let spec = PredictorSpec::uniform(1, ConceptNoise::temperature(1.0));
        assert!(generate(&kt, &spec, 0, 10, 0).is_err());
        let spec = spec.with_ties(TiePolicy::SplitMass);
        let (_, test) = generate(&kt, &spec, 0, 2000, 0).unwrap();
        let ones = test.iter().filter(|r| r.y_star == 1).count() as f64 / 2000.0;
        assert!((ones - 0.5).abs() < 0.05);
    }

    #[test]
    fn ingest_round_trip_and_errors() {
        let kt = kt(KnowledgeProgram::DigitSum { k: 2, base: 3 });
        let spec = PredictorSpec::uniform(2, ConceptNoise::temperature(0.5).with_logit_noise(0.3));
        let (cal, _) = generate(&kt, &spec, 5, 0, 2).unwrap();
        let mut buf = Vec::new();
        write_records(&mut buf, &cal).unwrap();
        assert_eq!(ingest(&buf[..], &kt, true).unwrap(), cal);

        let no_labels = r#"{"id":"a","concept_probs":[[0.5,0.5,0.0],[0.0,1.0,0.0]],"y_star":1}"#;
        let got = ingest(no_labels.as_bytes(), &kt, false).unwrap();
        let lp = got[0].label_probs.as_ref().unwrap();
        assert_eq!(lp, &vec![0.0, 0.5, 0.5, 0.0, 0.0]);

        let short = r#"{"id":"b","concept_probs":[[1.0,0.0,0.0]],"y_star":0}"#;
        assert!(matches!(ingest(short.as_bytes(), &kt, false), Err(Error::DimensionMismatch { .. })));

        let bad = format!("{no_labels}\n\n{{not json\n");
        assert!(matches!(ingest(bad.as_bytes(), &kt, false), Err(Error::Parse { line: 3, .. })));

        let off = r#"{"id":"c","concept_probs":[[1.0,0.0,0.0],[1.0,0.0,0.0]],"c_star":[0,0],"y_star":2}"#;
        assert!(ingest(off.as_bytes(), &kt, false).is_ok());
        assert!(matches!(ingest(off.as_bytes(), &kt, true), Err(Error::SupportViolation { .. })));
    }

    #[test]
    fn record_field_order_is_fixed() {
        let r = ExampleRecord {
            id: "x".into(),
            concept_probs: FactorizedConceptDistribution::new(vec![vec![1.0]]).unwrap(),
            label_probs: Some(vec![1.0]),
            c_star: Some(vec![0]),
            y_star: 0,
        };
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"id":"x","concept_probs":[[1.0]],"label_probs":[1.0],"c_star":[0],"y_star":0}"#
        );
    }
}
