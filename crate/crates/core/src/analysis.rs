//! Activation-count profiles and two-dimensional loss-landscape slices.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mlp::{Layer, Mlp};
use crate::train::{evaluate, Dataset};

/// Datasets up to this size get one histogram bin per possible count.
pub const EXACT_BIN_LIMIT: usize = 5000;
pub const COARSE_BINS: usize = 100;

const DIRECTION_STREAMS: [u64; 2] = [0x0d1, 0x0d2];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binning {
    /// Bin `k` holds neurons active on exactly `k` samples.
    Exact,
    /// `COARSE_BINS` equal-width bins over `[0, samples]`.
    Coarse,
}

/// Per-layer histogram of how many samples each neuron fires on.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationProfile {
    pub epoch: usize,
    pub samples: usize,
    pub binning: Binning,
    /// `[layer][neuron]` active-sample counts.
    pub counts: Vec<Vec<usize>>,
    /// `[layer][bin]` fraction of the layer's neurons; sums to 1 per layer.
    pub frequencies: Vec<Vec<f64>>,
}

impl ActivationProfile {
    pub fn bins(&self) -> usize {
        self.frequencies.first().map_or(0, Vec::len)
    }

    pub fn layers(&self) -> usize {
        self.frequencies.len()
    }

    /// Fraction of neurons in `layer` that never fire.
    pub fn dead_fraction(&self, layer: usize) -> f64 {
        self.frequencies[layer][0]
    }
}

fn bin_of(count: usize, samples: usize, binning: Binning) -> usize {
    match binning {
        Binning::Exact => count,
        Binning::Coarse => (count * COARSE_BINS / (samples + 1)).min(COARSE_BINS - 1),
    }
}

/// A neuron counts as active on a sample when its post-activation is
/// strictly positive.
pub fn build_profile(model: &Mlp, data: &Dataset, epoch: usize) -> Result<ActivationProfile> {
    if data.is_empty() {
        return Err(Error::Empty {
            op: "build_profile",
        });
    }
    let samples = data.len();
    let binning = if samples <= EXACT_BIN_LIMIT {
        Binning::Exact
    } else {
        Binning::Coarse
    };
    let n_bins = match binning {
        Binning::Exact => samples + 1,
        Binning::Coarse => COARSE_BINS,
    };
    let pass = model.forward(&data.input_tensor())?;
    let act = model.activation();
    let mut counts = Vec::with_capacity(pass.pre_activations.len());
    let mut frequencies = Vec::with_capacity(pass.pre_activations.len());
    for z in &pass.pre_activations {
        let width = z.shape()[1];
        let mut per_neuron = vec![0usize; width];
        for row in z.values().chunks_exact(width) {
            for (c, &v) in per_neuron.iter_mut().zip(row) {
                if act.forward_value(v) > 0.0 {
                    *c += 1;
                }
            }
        }
        let mut hist = vec![0.0; n_bins];
        for &c in &per_neuron {
            hist[bin_of(c, samples, binning)] += 1.0;
        }
        hist.iter_mut().for_each(|h| *h /= width as f64);
        counts.push(per_neuron);
        frequencies.push(hist);
    }
    Ok(ActivationProfile {
        epoch,
        samples,
        binning,
        counts,
        frequencies,
    })
}

/// A parameter-shaped perturbation.
pub type Direction = Vec<Layer>;

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Two Gaussian directions with each layer's weight slice rescaled to the
/// ℓ₂ norm of that layer's weights. Bias slices are zero.
pub fn sample_directions(model: &Mlp, seed: u64) -> (Direction, Direction) {
    let draw = |stream: u64| -> Direction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        model
            .layers
            .iter()
            .map(|layer| {
                let mut d = Layer::zeros(layer.fan_in, layer.fan_out);
                d.weight
                    .iter_mut()
                    .for_each(|w| *w = StandardNormal.sample(&mut rng));
                let target = l2(&layer.weight);
                let norm = l2(&d.weight);
                if target == 0.0 || norm == 0.0 {
                    d.weight.iter_mut().for_each(|w| *w = 0.0);
                } else {
                    let scale = target / norm;
                    d.weight.iter_mut().for_each(|w| *w *= scale);
                }
                d
            })
            .collect()
    };
    (draw(DIRECTION_STREAMS[0]), draw(DIRECTION_STREAMS[1]))
}

/// Grid coordinates along one axis. The midpoint of `[lo, hi]` is always
/// one of them, at index `resolution / 2`: odd resolutions span the closed
/// interval, even ones step by `(hi − lo)/resolution` from `lo`.
pub fn axis(lo: f64, hi: f64, resolution: usize) -> Vec<f64> {
    assert!(resolution > 0, "resolution must be positive");
    let mid = 0.5 * (lo + hi);
    let center = resolution / 2;
    let span = hi - lo;
    (0..resolution)
        .map(|i| {
            if i == center {
                mid
            } else if resolution % 2 == 1 {
                lo + span * i as f64 / (resolution - 1) as f64
            } else {
                lo + span * i as f64 / resolution as f64
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeGrid {
    pub range: (f64, f64),
    pub resolution: usize,
    /// Coordinates along both axes; rows follow `d1`, columns `d2`.
    pub coords: Vec<f64>,
    /// `losses[i][j] = loss(θ + coords[i]·d1 + coords[j]·d2)`.
    pub losses: Vec<Vec<f64>>,
}

impl LandscapeGrid {
    pub fn center_index(&self) -> usize {
        self.resolution / 2
    }

    pub fn center(&self) -> f64 {
        let c = self.center_index();
        self.losses[c][c]
    }

    pub fn min(&self) -> f64 {
        self.losses
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// True when no cell is strictly below the center.
    pub fn center_is_minimum(&self) -> bool {
        self.center() <= self.min()
    }
}

fn perturbed(model: &Mlp, d1: &Direction, a: f64, d2: &Direction, b: f64) -> Mlp {
    let mut m = model.clone();
    if a == 0.0 && b == 0.0 {
        return m;
    }
    for ((layer, u), v) in m.layers.iter_mut().zip(d1).zip(d2) {
        for ((w, du), dv) in layer.weight.iter_mut().zip(&u.weight).zip(&v.weight) {
            *w += a * du + b * dv;
        }
        for ((w, du), dv) in layer.bias.iter_mut().zip(&u.bias).zip(&v.bias) {
            *w += a * du + b * dv;
        }
    }
    m
}

/// Mean squared error over `data` across the plane spanned by `d1`, `d2`.
/// `model` is only read; each cell evaluates its own perturbed copy.
pub fn loss_grid(
    model: &Mlp,
    data: &Dataset,
    d1: &Direction,
    d2: &Direction,
    range: (f64, f64),
    resolution: usize,
) -> Result<LandscapeGrid> {
    let shaped = |d: &Direction| {
        d.len() == model.layers.len()
            && d.iter()
                .zip(&model.layers)
                .all(|(a, b)| a.weight.len() == b.weight.len() && a.bias.len() == b.bias.len())
    };
    if !shaped(d1) || !shaped(d2) {
        return Err(Error::InvalidParameter(
            "directions must be shaped like the model parameters".into(),
        ));
    }
    let coords = axis(range.0, range.1, resolution);
    let losses = coords
        .par_iter()
        .map(|&a| {
            coords
                .iter()
                .map(|&b| Ok(evaluate(&perturbed(model, d1, a, d2, b), data)?.mean_loss))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LandscapeGrid {
        range,
        resolution,
        coords,
        losses,
    })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Header line plus one comma-separated row per `d1` coordinate.
pub fn export_grid(grid: &LandscapeGrid, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    let write = |out: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        writeln!(
            out,
            "# rows=d1 cols=d2 range={}:{} resolution={}x{} dataset=train",
            fmt_f64(grid.range.0),
            fmt_f64(grid.range.1),
            grid.resolution,
            grid.resolution
        )?;
        for row in &grid.losses {
            let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

fn header_fields(line: &str) -> impl Iterator<Item = (&str, &str)> {
    line.trim_start_matches('#')
        .split_whitespace()
        .filter_map(|kv| kv.split_once('='))
}

pub fn parse_grid(path: &Path) -> Result<LandscapeGrid> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
    let mut range = None;
    let mut resolution = None;
    for (k, v) in header_fields(header) {
        match k {
            "range" => {
                let (lo, hi) = v
                    .split_once(':')
                    .ok_or_else(|| perr(1, "bad range".into()))?;
                let lo: f64 = lo.parse().map_err(|_| perr(1, "bad range".into()))?;
                let hi: f64 = hi.parse().map_err(|_| perr(1, "bad range".into()))?;
                range = Some((lo, hi));
            }
            "resolution" => {
                let n = v.split('x').next().unwrap_or_default();
                resolution = Some(
                    n.parse::<usize>()
                        .map_err(|_| perr(1, "bad resolution".into()))?,
                );
            }
            _ => {}
        }
    }
    let range = range.ok_or_else(|| perr(1, "missing range".into()))?;
    let resolution = resolution.ok_or_else(|| perr(1, "missing resolution".into()))?;
    let losses = lines
        .enumerate()
        .map(|(i, l)| {
            l.split(',')
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .map_err(|e| perr(i + 2, e.to_string()))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    if losses.len() != resolution || losses.iter().any(|r| r.len() != resolution) {
        return Err(perr(
            1,
            format!("expected a {resolution}x{resolution} matrix"),
        ));
    }
    Ok(LandscapeGrid {
        range,
        resolution,
        coords: axis(range.0, range.1, resolution),
        losses,
    })
}

/// `layer,bin,frequency` triples, one row per bin of every layer.
pub fn export_profile(profile: &ActivationProfile, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    let binning = match profile.binning {
        Binning::Exact => "exact",
        Binning::Coarse => "coarse",
    };
    let write = |out: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        writeln!(
            out,
            "# layer,bin,frequency epoch={} samples={} binning={binning} dataset=train",
            profile.epoch, profile.samples
        )?;
        for (layer, hist) in profile.frequencies.iter().enumerate() {
            for (bin, f) in hist.iter().enumerate() {
                writeln!(out, "{layer},{bin},{}", fmt_f64(*f))?;
            }
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

/// Reads back `(epoch, [layer][bin] frequencies)`.
pub fn parse_profile(path: &Path) -> Result<(usize, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let perr = |line: usize, msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.to_string(),
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| perr(1, "empty file"))?;
    let epoch = header_fields(header)
        .find(|(k, _)| *k == "epoch")
        .and_then(|(_, v)| v.parse().ok())
        .ok_or_else(|| perr(1, "missing epoch"))?;
    let mut layers: Vec<Vec<f64>> = Vec::new();
    for (i, line) in lines.enumerate() {
        let mut parts = line.split(',');
        let (Some(l), Some(b), Some(f), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(perr(i + 2, "expected layer,bin,frequency"));
        };
        let layer: usize = l.parse().map_err(|_| perr(i + 2, "bad layer"))?;
        let bin: usize = b.parse().map_err(|_| perr(i + 2, "bad bin"))?;
        let freq: f64 = f.parse().map_err(|_| perr(i + 2, "bad frequency"))?;
        if layer == layers.len() {
            layers.push(Vec::new());
        }
        match layers.get_mut(layer) {
            Some(hist) if hist.len() == bin => hist.push(freq),
            _ => return Err(perr(i + 2, "rows out of order")),
        }
    }
    Ok((epoch, layers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::ActivationKind;
    use crate::mlp::MlpConfig;
    use crate::sugar::Method;

    fn data(n: usize) -> Dataset {
        let xs: Vec<f64> = (0..n).map(|i| -1.5 + 3.0 * i as f64 / n as f64).collect();
        let ys = xs.iter().map(|x: &f64| x.abs()).collect();
        Dataset::new(1, 1, xs, ys).unwrap()
    }

    fn relu_model(seed: u64) -> Mlp {
        Mlp::init_he_symmetric(
            MlpConfig::deep_narrow(1, 1, Method::Plain(ActivationKind::Relu)),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn zero_model_is_all_dead() {
        let model = Mlp::zeros(MlpConfig::default()).unwrap();
        let p = build_profile(&model, &data(50), 0).unwrap();
        assert_eq!(p.bins(), 51);
        for layer in 0..p.layers() {
            assert_eq!(p.dead_fraction(layer), 1.0);
        }
    }

    #[test]
    fn always_active_neuron_lands_in_last_bin() {
        let mut model = Mlp::zeros(MlpConfig {
            hidden_layers: 1,
            width: 1,
            ..MlpConfig::default()
        })
        .unwrap();
        model.layers[0].bias = vec![1.0];
        let p = build_profile(&model, &data(40), 3).unwrap();
        assert_eq!(p.counts[0], vec![40]);
        assert_eq!(p.frequencies[0][40], 1.0);
        assert_eq!(p.epoch, 3);
    }

    #[test]
    fn large_datasets_use_coarse_bins() {
        let model = relu_model(4);
        let p = build_profile(&model, &data(6000), 0).unwrap();
        assert_eq!(p.binning, Binning::Coarse);
        assert_eq!(p.bins(), COARSE_BINS);
        for hist in &p.frequencies {
            assert!((hist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn directions_match_layer_norms() {
        let model = relu_model(2);
        let (d1, d2) = sample_directions(&model, 5);
        for ((u, v), w) in d1.iter().zip(&d2).zip(&model.layers) {
            assert!((l2(&u.weight) - l2(&w.weight)).abs() < 1e-12);
            assert!((l2(&v.weight) - l2(&w.weight)).abs() < 1e-12);
            assert!(u.bias.iter().all(|&b| b == 0.0));
        }
        assert_eq!(sample_directions(&model, 5), (d1.clone(), d2));
        assert_ne!(sample_directions(&model, 6).0, d1);
    }

    #[test]
    fn zero_norm_layer_gets_zero_direction() {
        let mut model = relu_model(2);
        model.layers[3].weight.iter_mut().for_each(|w| *w = 0.0);
        let (d1, _) = sample_directions(&model, 1);
        assert!(d1[3].weight.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn axis_contains_midpoint() {
        assert_eq!(axis(-0.25, 0.25, 1), vec![0.0]);
        let a = axis(-0.25, 0.25, 100);
        assert_eq!(a.len(), 100);
        assert_eq!(a[50], 0.0);
        assert_eq!(a[0], -0.25);
        let b = axis(-0.25, 0.25, 5);
        assert_eq!(b, vec![-0.25, -0.125, 0.0, 0.125, 0.25]);
    }

    #[test]
    fn single_cell_grid_is_baseline() {
        let model = relu_model(1);
        let d = data(64);
        let (d1, d2) = sample_directions(&model, 1);
        let grid = loss_grid(&model, &d, &d1, &d2, (-0.25, 0.25), 1).unwrap();
        let base = evaluate(&model, &d).unwrap().mean_loss;
        assert_eq!(grid.losses, vec![vec![base]]);
        let again = loss_grid(&model, &d, &d1, &d2, (-0.25, 0.25), 1).unwrap();
        assert_eq!(grid, again);
    }

    #[test]
    fn grid_rejects_misshaped_directions() {
        let model = relu_model(1);
        let (mut d1, d2) = sample_directions(&model, 1);
        d1.pop();
        assert!(loss_grid(&model, &data(8), &d1, &d2, (-0.25, 0.25), 3).is_err());
    }

    #[test]
    fn grid_export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = LandscapeGrid {
            range: (-0.25, 0.25),
            resolution: 2,
            coords: axis(-0.25, 0.25, 2),
            losses: vec![vec![0.1, 1.0 / 3.0], vec![2.5e-17, 7.0]],
        };
        let path = dir.path().join("g.csv");
        export_grid(&grid, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(parse_grid(&path).unwrap(), grid);
    }

    #[test]
    fn profile_export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = build_profile(&relu_model(3), &data(30), 7).unwrap();
        let path = dir.path().join("sub/p.csv");
        export_profile(&p, &path).unwrap();
        let (epoch, freqs) = parse_profile(&path).unwrap();
        assert_eq!(epoch, 7);
        assert_eq!(freqs, p.frequencies);
        assert!(freqs.iter().all(|h| h.len() == p.bins()));
    }

    #[test]
    fn io_errors_carry_the_path() {
        let err = parse_grid(Path::new("/nonexistent/grid.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/grid.csv"));
    }
}
