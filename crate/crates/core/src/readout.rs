//! Linear readout over sampled reservoir state, trained by ridge regression,
//! and the sawtooth-versus-square discrimination task built on it.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DriveAssignment, SimulationConfig, Simulator};
use crate::error::{Error, Result};
use crate::network::{Network, NodeRole};
use crate::signals::{Signal, SignalKind};
use crate::util::{fmt_num, solve_psd};

const RANK_RTOL: f64 = 1e-13;

/// Training instances by row. When a bias column is present it is the
/// last column and holds 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: DMatrix<f64>,
    bias: bool,
}

impl FeatureMatrix {
    /// Appends a constant bias column to `rows`.
    pub fn with_bias(rows: &[Vec<f64>]) -> Result<Self> {
        Self::build(rows, true)
    }

    pub fn without_bias(rows: &[Vec<f64>]) -> Result<Self> {
        Self::build(rows, false)
    }

    fn build(rows: &[Vec<f64>], bias: bool) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
            return Err(Error::Dimension(format!(
                "row {i} has {} features, expected {width}",
                r.len()
            )));
        }
        if rows.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Dimension("non-finite feature".into()));
        }
        let cols = width + usize::from(bias);
        let data = DMatrix::from_fn(rows.len(), cols, |i, j| {
            if j < width {
                rows[i][j]
            } else {
                1.0
            }
        });
        Ok(Self { data, bias })
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn has_bias(&self) -> bool {
        self.bias
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            data: self.data.select_rows(rows),
            bias: self.bias,
        }
    }

    /// Header `f0..f{n-1}[,bias]`, then one row per instance.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let features = self.cols() - usize::from(self.bias);
        let mut header: Vec<String> = (0..features).map(|j| format!("f{j}")).collect();
        if self.bias {
            header.push("bias".into());
        }
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.rows() {
            let row: Vec<String> = (0..self.cols()).map(|j| fmt_num(self.data[(i, j)])).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutWeights {
    /// One weight vector per target column, each of length `cols`.
    pub weights: Vec<Vec<f64>>,
    /// Set when the unregularized normal equations were singular; the
    /// weights are then the minimum-norm solution.
    pub rank_deficient: bool,
}

impl ReadoutWeights {
    pub fn scores(&self, features: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        self.weights
            .iter()
            .map(|w| {
                if w.len() != features.cols() {
                    return Err(Error::Dimension(format!(
                        "{} weights for {} feature columns",
                        w.len(),
                        features.cols()
                    )));
                }
                let w = DVector::from_column_slice(w);
                Ok((features.matrix() * w).as_slice().to_vec())
            })
            .collect()
    }
}

/// Minimizes `‖F w - y‖² + ridge ‖w‖²` for each target column, leaving the
/// bias weight unpenalized. `targets` is indexed `[row][target]`.
pub fn train_readout(
    features: &FeatureMatrix,
    targets: &[Vec<f64>],
    ridge: f64,
) -> Result<ReadoutWeights> {
    if targets.len() != features.rows() {
        return Err(Error::Dimension(format!(
            "{} target rows for {} feature rows",
            targets.len(),
            features.rows()
        )));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::Config(format!("ridge must be non-negative, got {ridge}")));
    }
    let dims = targets.first().map_or(0, Vec::len);
    if targets.iter().any(|t| t.len() != dims) {
        return Err(Error::Dimension("ragged target matrix".into()));
    }
    let f = features.matrix();
    let p = f.ncols();
    let y = DMatrix::from_fn(targets.len(), dims, |i, j| targets[i][j]);
    if !features.bias {
        let gram = f.transpose() * f + DMatrix::identity(p, p) * ridge;
        let (sol, rank) = solve_psd(gram, &(f.transpose() * y), RANK_RTOL);
        return Ok(ReadoutWeights {
            weights: columns(&sol),
            rank_deficient: rank < p,
        });
    }

    // The unpenalized bias is eliminated by centering; it is recovered from
    // the column means afterwards.
    let q = p - 1;
    let x = f.columns(0, q);
    let x_mean = x.row_mean();
    let y_mean = y.row_mean();
    let xc = DMatrix::from_fn(x.nrows(), q, |i, j| x[(i, j)] - x_mean[j]);
    let yc = DMatrix::from_fn(y.nrows(), dims, |i, j| y[(i, j)] - y_mean[j]);
    let gram = xc.transpose() * &xc + DMatrix::identity(q, q) * ridge;
    let (w, rank) = solve_psd(gram, &(xc.transpose() * yc), RANK_RTOL);
    let mut sol = DMatrix::zeros(p, dims);
    sol.rows_mut(0, q).copy_from(&w);
    for j in 0..dims {
        sol[(q, j)] = y_mean[j] - (0..q).map(|i| x_mean[i] * w[(i, j)]).sum::<f64>();
    }
    Ok(ReadoutWeights {
        weights: columns(&sol),
        rank_deficient: rank < q,
    })
}

fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.ncols())
        .map(|j| m.column(j).iter().copied().collect())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn from_score(score: f64) -> Self {
        if score >= 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn target(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }
}

/// Sign of the first readout dimension; a zero score counts as positive.
pub fn classify(weights: &ReadoutWeights, features: &FeatureMatrix) -> Result<Vec<Label>> {
    let scores = weights.scores(features)?;
    let first = scores
        .into_iter()
        .next()
        .ok_or_else(|| Error::Dimension("readout has no output dimension".into()))?;
    Ok(first.into_iter().map(Label::from_score).collect())
}

/// Which reservoir observables feed the readout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observables {
    pub voltages: bool,
    pub resistances: bool,
}

impl Default for Observables {
    fn default() -> Self {
        Self {
            voltages: true,
            resistances: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub episodes: usize,
    pub train_fraction: f64,
    pub frequency: f64,
    pub amplitude: f64,
    pub duration: f64,
    pub dt: f64,
    pub samples_per_episode: usize,
    pub observables: Observables,
    pub ridge: f64,
    pub seed: u64,
    /// Permute labels after simulation (chance-level control).
    pub shuffle_labels: bool,
    pub jobs: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            train_fraction: 0.8,
            frequency: 1.0,
            amplitude: 1.0,
            duration: 2.0,
            dt: 0.006,
            samples_per_episode: 8,
            observables: Observables::default(),
            ridge: 1e-6,
            seed: 0,
            shuffle_labels: false,
            jobs: 1,
        }
    }
}

impl TaskConfig {
    pub fn n_steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn n_train(&self) -> usize {
        (self.episodes as f64 * self.train_fraction).round() as usize
    }

    /// Trace indices at which observables are sampled: evenly spaced, the
    /// last one at the end of the episode.
    pub fn sample_indices(&self) -> Vec<usize> {
        let n = self.n_steps();
        (1..=self.samples_per_episode)
            .map(|j| (j as f64 * n as f64 / self.samples_per_episode as f64).round() as usize)
            .collect()
    }

    fn check(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train fraction must lie in (0, 1)".into()));
        }
        if self.samples_per_episode == 0 {
            return Err(Error::Config("need at least one sample per episode".into()));
        }
        if !(self.dt > 0.0 && self.duration >= self.dt) {
            return Err(Error::Config("episode must span at least one step".into()));
        }
        if !self.observables.voltages && !self.observables.resistances {
            return Err(Error::Config("no observables selected".into()));
        }
        let n_train = self.n_train();
        let n_test = self.episodes.saturating_sub(n_train);
        if n_train < 2 || n_test < 2 {
            return Err(Error::Task(format!(
                "{} episodes split {:.0}/{:.0} gives {n_train} training and {n_test} test episodes; \
                 both sets need at least 2 so each can hold both classes",
                self.episodes,
                100.0 * self.train_fraction,
                100.0 * (1.0 - self.train_fraction)
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Waveform {
    Square,
    Sawtooth,
}

impl Waveform {
    pub fn label(self) -> Label {
        match self {
            Waveform::Square => Label::Positive,
            Waveform::Sawtooth => Label::Negative,
        }
    }

    fn kind(self) -> SignalKind {
        match self {
            Waveform::Square => SignalKind::Square,
            Waveform::Sawtooth => SignalKind::Sawtooth,
        }
    }
}

/// Simulated episodes with raw (unscaled, bias-free) observables.
#[derive(Debug, Clone, PartialEq)]
pub struct Episodes {
    pub waveforms: Vec<Waveform>,
    pub phases: Vec<f64>,
    pub features: Vec<Vec<f64>>,
}

/// Draws balanced labels and random phases from the task seed, then
/// simulates every episode from the network's initial resistances.
pub fn simulate_episodes(network: &Network, config: &TaskConfig) -> Result<Episodes> {
    config.check()?;
    if network.ids_with_role(NodeRole::External).is_empty() {
        return Err(Error::Task("network has no external node to drive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut waveforms: Vec<Waveform> = (0..config.episodes)
        .map(|i| {
            if i % 2 == 0 {
                Waveform::Square
            } else {
                Waveform::Sawtooth
            }
        })
        .collect();
    waveforms.shuffle(&mut rng);
    let phases: Vec<f64> = (0..config.episodes)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();

    let run = |i: usize| -> Result<Vec<f64>> {
        episode_features(network, config, waveforms[i], phases[i])
            .map_err(|e| Error::Task(format!("episode {i}: {e}")))
    };
    let features = if config.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| (0..config.episodes).into_par_iter().map(run).collect())
    } else {
        (0..config.episodes).map(run).collect::<Result<Vec<_>>>()
    }?;
    Ok(Episodes {
        waveforms,
        phases,
        features,
    })
}

fn episode_features(
    network: &Network,
    config: &TaskConfig,
    waveform: Waveform,
    phase: f64,
) -> Result<Vec<f64>> {
    let signal = Signal::new(waveform.kind(), config.amplitude, config.frequency).with_phase(phase);
    let drives = network
        .ids_with_role(NodeRole::External)
        .into_iter()
        .fold(DriveAssignment::new(), |d, id| d.with(id, signal));
    let sim = Simulator::new(network, &drives, SimulationConfig::new(config.dt, config.n_steps()))?;
    let internal: Vec<usize> = network
        .nodes()
        .iter()
        .enumerate()
        .filter(|(_, n)| n.role == NodeRole::Internal)
        .map(|(i, _)| i)
        .collect();
    let picks = config.sample_indices();
    let mut out = Vec::new();
    sim.run_with(|i, state| {
        if picks.contains(&i) {
            if config.observables.voltages {
                out.extend(internal.iter().map(|&j| state.node_voltages[j]));
            }
            if config.observables.resistances {
                out.extend_from_slice(&state.resistances);
            }
        }
    })?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeScore {
    pub index: usize,
    pub waveform: Waveform,
    pub label: Label,
    pub phase: f64,
    pub train: bool,
    pub score: f64,
    pub predicted: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub seed: u64,
    pub episodes: usize,
    pub split: Split,
    pub accuracy: f64,
    pub train_accuracy: f64,
    pub shuffled_labels: bool,
    pub observables: Observables,
    pub ridge: f64,
    pub rank_deficient: bool,
    pub per_episode: Vec<EpisodeScore>,
}

/// Trains on the first `n_train` episodes and scores the rest. Features are
/// standardized with statistics from the training rows only.
pub fn evaluate_episodes(episodes: &Episodes, config: &TaskConfig) -> Result<(TaskReport, FeatureMatrix)> {
    config.check()?;
    let n = episodes.features.len();
    if n != config.episodes {
        return Err(Error::Dimension(format!(
            "{n} simulated episodes, config expects {}",
            config.episodes
        )));
    }
    let mut labels: Vec<Label> = episodes.waveforms.iter().map(|w| w.label()).collect();
    if config.shuffle_labels {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed_5eed_5eed);
        labels.shuffle(&mut rng);
    }
    let n_train = config.n_train();
    for (name, range) in [("training", 0..n_train), ("test", n_train..n)] {
        let pos = labels[range.clone()].iter().filter(|&&l| l == Label::Positive).count();
        if pos == 0 || pos == range.len() {
            return Err(Error::Task(format!(
                "{name} set of {} episodes holds only one class; use more episodes",
                range.len()
            )));
        }
    }

    let width = episodes.features[0].len();
    let mut mean = vec![0.0; width];
    let mut sd = vec![0.0; width];
    for row in &episodes.features[..n_train] {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x / n_train as f64;
        }
    }
    for row in &episodes.features[..n_train] {
        for ((s, x), m) in sd.iter_mut().zip(row).zip(&mean) {
            *s += (x - m).powi(2) / n_train as f64;
        }
    }
    let standardized: Vec<Vec<f64>> = episodes
        .features
        .iter()
        .map(|row| {
            row.iter()
                .zip(&mean)
                .zip(&sd)
                .map(|((x, m), s)| if *s > 0.0 { (x - m) / s.sqrt() } else { 0.0 })
                .collect()
        })
        .collect();
    let features = FeatureMatrix::with_bias(&standardized)?;

    let train_rows: Vec<usize> = (0..n_train).collect();
    let train = features.select(&train_rows);
    let targets: Vec<Vec<f64>> = labels[..n_train].iter().map(|l| vec![l.target()]).collect();
    let weights = train_readout(&train, &targets, config.ridge)?;
    let scores = weights.scores(&features)?.swap_remove(0);

    let per_episode: Vec<EpisodeScore> = (0..n)
        .map(|i| EpisodeScore {
            index: i,
            waveform: episodes.waveforms[i],
            label: labels[i],
            phase: episodes.phases[i],
            train: i < n_train,
            score: scores[i],
            predicted: Label::from_score(scores[i]),
        })
        .collect();
    let accuracy_of = |range: std::ops::Range<usize>| {
        let len = range.len() as f64;
        per_episode[range].iter().filter(|e| e.predicted == e.label).count() as f64 / len
    };
    let report = TaskReport {
        seed: config.seed,
        episodes: n,
        split: Split {
            train: n_train,
            test: n - n_train,
        },
        accuracy: accuracy_of(n_train..n),
        train_accuracy: accuracy_of(0..n_train),
        shuffled_labels: config.shuffle_labels,
        observables: config.observables,
        ridge: config.ridge,
        rank_deficient: weights.rank_deficient,
        per_episode,
    };
    Ok((report, features))
}

/// Runs the full sawtooth-versus-square task and returns the report with
/// the standardized feature matrix.
pub fn waveform_task(network: &Network, config: &TaskConfig) -> Result<(TaskReport, FeatureMatrix)> {
    let episodes = simulate_episodes(network, config)?;
    evaluate_episodes(&episodes, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect())
            .collect()
    }

    #[test]
    fn identity_features_reproduce_targets() {
        let f = FeatureMatrix::without_bias(&identity(4)).unwrap();
        let y = vec![vec![1.5], vec![-2.0], vec![0.25], vec![7.0]];
        let w = train_readout(&f, &y, 0.0).unwrap();
        for (a, b) in w.weights[0].iter().zip([1.5, -2.0, 0.25, 7.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(!w.rank_deficient);
    }

    #[test]
    fn linear_data_exact() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 0.3 - 1.0]).collect();
        let y: Vec<Vec<f64>> = rows.iter().map(|r| vec![3.0 * r[0]]).collect();
        let f = FeatureMatrix::with_bias(&rows).unwrap();
        let w = train_readout(&f, &y, 0.0).unwrap();
        assert!((w.weights[0][0] - 3.0).abs() < 1e-10);
        assert!(w.weights[0][1].abs() < 1e-10);
    }

    #[test]
    fn large_ridge_shrinks_to_bias() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64 * 0.1]).collect();
        let y: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0] - r[1] + 4.0]).collect();
        let f = FeatureMatrix::with_bias(&rows).unwrap();
        let w = train_readout(&f, &y, 1e12).unwrap();
        assert!(w.weights[0][0].abs() < 1e-8);
        assert!(w.weights[0][1].abs() < 1e-8);
        let mean_y = y.iter().map(|v| v[0]).sum::<f64>() / 10.0;
        assert!((w.weights[0][2] - mean_y).abs() < 1e-6);
    }

    #[test]
    fn residual_orthogonal_to_features() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let x = i as f64;
                vec![x.sin(), (0.3 * x).cos(), x * 0.05]
            })
            .collect();
        let y: Vec<Vec<f64>> = (0..20).map(|i| vec![((i * 7) % 5) as f64]).collect();
        let f = FeatureMatrix::with_bias(&rows).unwrap();
        let w = train_readout(&f, &y, 0.0).unwrap();
        let pred = w.scores(&f).unwrap().swap_remove(0);
        let resid: Vec<f64> = pred.iter().zip(&y).map(|(p, t)| t[0] - p).collect();
        let scale = resid.iter().map(|r| r * r).sum::<f64>().sqrt();
        for j in 0..f.cols() {
            let col = f.matrix().column(j);
            let dot: f64 = col.iter().zip(&resid).map(|(a, b)| a * b).sum();
            let norm = col.norm();
            assert!(dot.abs() <= 1e-8 * norm * scale, "column {j}: {dot}");
        }
    }

    #[test]
    fn rank_deficiency_flagged_at_zero_ridge() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let y: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let f = FeatureMatrix::with_bias(&rows).unwrap();
        let w = train_readout(&f, &y, 0.0).unwrap();
        assert!(w.rank_deficient);
        let pred = w.scores(&f).unwrap().swap_remove(0);
        for (p, t) in pred.iter().zip(&y) {
            assert!((p - t[0]).abs() < 1e-8);
        }
        assert!(!train_readout(&f, &y, 0.1).unwrap().rank_deficient);
    }

    #[test]
    fn bad_inputs_rejected() {
        assert!(FeatureMatrix::with_bias(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(FeatureMatrix::with_bias(&[vec![f64::NAN]]).is_err());
        let f = FeatureMatrix::with_bias(&[vec![1.0], vec![2.0]]).unwrap();
        assert!(train_readout(&f, &[vec![1.0]], 0.0).is_err());
        assert!(train_readout(&f, &[vec![1.0], vec![2.0]], -1.0).is_err());
    }

    #[test]
    fn classify_sign_rule() {
        let f = FeatureMatrix::without_bias(&[vec![0.7], vec![-0.2], vec![0.0]]).unwrap();
        let w = ReadoutWeights {
            weights: vec![vec![1.0]],
            rank_deficient: false,
        };
        assert_eq!(
            classify(&w, &f).unwrap(),
            vec![Label::Positive, Label::Negative, Label::Positive]
        );
        let wrong = ReadoutWeights {
            weights: vec![vec![1.0, 2.0]],
            rank_deficient: false,
        };
        assert!(classify(&wrong, &f).is_err());
    }

    #[test]
    fn degenerate_single_episode_data_is_memorized() {
        // one instance per class, trained and scored on itself
        let rows = vec![vec![0.3, -1.0], vec![-0.4, 0.8]];
        let f = FeatureMatrix::with_bias(&rows).unwrap();
        let y = vec![vec![1.0], vec![-1.0]];
        let w = train_readout(&f, &y, 0.0).unwrap();
        assert_eq!(classify(&w, &f).unwrap(), vec![Label::Positive, Label::Negative]);
    }

    #[test]
    fn too_few_episodes_rejected() {
        let net = crate::network::build_series_benchmark();
        let config = TaskConfig {
            episodes: 4,
            ..Default::default()
        };
        let err = waveform_task(&net, &config).unwrap_err();
        assert!(matches!(err, Error::Task(_)));
        assert!(err.to_string().contains("test"));
    }

    #[test]
    fn sample_indices_even() {
        let c = TaskConfig::default();
        assert_eq!(c.n_steps(), 333);
        let idx = c.sample_indices();
        assert_eq!(idx.len(), 8);
        assert_eq!(*idx.last().unwrap(), 333);
        assert_eq!(idx[0], 42);
    }

    #[test]
    fn csv_export() {
        let f = FeatureMatrix::with_bias(&[vec![1.0, 2.0]]).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("f0,f1,bias\n"));
    }
}
