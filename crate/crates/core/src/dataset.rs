//! Speed series ingestion, z-score normalization, sliding windows and the
//! chronological train/validation/test split.

use std::ops::Range;
use std::path::Path;

use ndarray::{s, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of observed steps fed to the model (one hour at 5 minutes).
pub const INPUT_WINDOW: usize = 12;

pub const TRAIN_FRACTION: f64 = 0.70;
pub const VAL_FRACTION: f64 = 0.15;

/// Traffic speeds, one row per timestep and one column per sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedSeries {
    pub values: Array2<f64>,
    pub interval_minutes: f64,
    pub sensor_ids: Vec<String>,
}

impl SpeedSeries {
    pub fn new(values: Array2<f64>, sensor_ids: Vec<String>) -> Result<Self> {
        if values.ncols() != sensor_ids.len() {
            return Err(Error::shape(
                "speed columns",
                sensor_ids.len(),
                values.ncols(),
            ));
        }
        if let Some(((t, c), v)) = values.indexed_iter().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::input(format!(
                "speed at timestep {t}, sensor {c} is {v}; speeds must be finite and non-negative"
            )));
        }
        Ok(Self {
            values,
            interval_minutes: 5.0,
            sensor_ids,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.values.nrows()
    }

    pub fn sensors(&self) -> usize {
        self.values.ncols()
    }
}

/// Reads a speed matrix: a header of sensor ids, then one row per timestep.
pub fn load_series(path: &Path) -> Result<SpeedSeries> {
    let name = path.display().to_string();
    let parse_err = |row: usize, column: usize, message: String| Error::Parse {
        path: name.clone(),
        row,
        column,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let ids: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if ids.is_empty() || ids.iter().all(String::is_empty) {
        return Err(parse_err(1, 1, "empty file or missing header".into()));
    }
    let n = ids.len();
    let mut flat = Vec::new();
    let mut rows = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = r + 2;
        if rec.len() != n {
            return Err(parse_err(
                line,
                rec.len().min(n) + 1,
                format!("ragged row: expected {n} cells, found {}", rec.len()),
            ));
        }
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(line, c + 1, format!("not a number: `{cell}`")))?;
            if !v.is_finite() {
                return Err(parse_err(line, c + 1, format!("non-finite value `{cell}`")));
            }
            flat.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(parse_err(2, 1, "no data rows".into()));
    }
    let values = Array2::from_shape_vec((rows, n), flat).expect("row-major fill");
    SpeedSeries::new(values, ids)
}

/// Writes the same layout [`load_series`] reads. Floats use the shortest
/// representation that parses back to the identical value.
pub fn save_series(path: &Path, series: &SpeedSeries) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&series.sensor_ids)?;
    for row in series.values.rows() {
        w.write_record(row.iter().map(|v| format!("{v}")))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Scalar z-score statistics (population standard deviation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: f64,
    pub std: f64,
}

impl Normalizer {
    pub fn fit(values: ArrayView2<'_, f64>) -> Result<Self> {
        let count = values.len();
        if count == 0 {
            return Err(Error::input("cannot fit a normalizer on an empty slice"));
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
        let std = var.sqrt();
        if !(std > 0.0) {
            return Err(Error::input("training slice is constant (std = 0)"));
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Sample-index ranges of the chronological split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBounds {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitBounds {
    /// 70:15:15 over `samples`, rounding the first two parts.
    pub fn chronological(samples: usize) -> Self {
        let train = ((samples as f64) * TRAIN_FRACTION).round() as usize;
        let val = (((samples as f64) * VAL_FRACTION).round() as usize).min(samples - train);
        Self {
            train: 0..train,
            val: train..train + val,
            test: train + val..samples,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Supervised view over a normalized series: sample `s` reads rows
/// `s ..= s + 11` as input and row `s + 11 + horizon` as target.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    raw: Array2<f64>,
    normalized: Array2<f64>,
    pub horizon_steps: usize,
    pub window: usize,
    pub split: SplitBounds,
    pub normalizer: Normalizer,
}

impl WindowedDataset {
    pub fn samples(&self) -> usize {
        self.split.test.end
    }

    pub fn sensors(&self) -> usize {
        self.raw.ncols()
    }

    pub fn range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.split.train.clone(),
            Split::Val => self.split.val.clone(),
            Split::Test => self.split.test.clone(),
        }
    }

    pub fn target_row(&self, sample: usize) -> usize {
        sample + self.window - 1 + self.horizon_steps
    }

    /// Normalized input window, `window × n`.
    pub fn input(&self, sample: usize) -> ArrayView2<'_, f64> {
        self.normalized.slice(s![sample..sample + self.window, ..])
    }

    /// Normalized target row.
    pub fn target(&self, sample: usize) -> ArrayView1<'_, f64> {
        self.normalized.row(self.target_row(sample))
    }

    /// Raw (miles/h) target row.
    pub fn raw_target(&self, sample: usize) -> ArrayView1<'_, f64> {
        self.raw.row(self.target_row(sample))
    }

    pub fn raw(&self) -> &Array2<f64> {
        &self.raw
    }

    /// Raw rows touched by training samples (inputs and targets); the only
    /// rows the normalizer sees.
    pub fn train_rows(&self) -> Range<usize> {
        train_rows(&self.split, self.window, self.horizon_steps)
    }

    /// Raw input rows spanned by the training samples; the per-epoch
    /// feature stream length of one sensor.
    pub fn train_timesteps(&self) -> usize {
        let n = self.split.train.len();
        if n == 0 {
            0
        } else {
            n + self.window - 1
        }
    }
}

fn train_rows(split: &SplitBounds, window: usize, horizon: usize) -> Range<usize> {
    if split.train.is_empty() {
        0..0
    } else {
        0..split.train.end - 1 + window + horizon
    }
}

/// Windows the series for one forecasting horizon, splits chronologically and
/// fits the z-score on the training rows only.
pub fn make_windows(series: &SpeedSeries, horizon_steps: usize) -> Result<WindowedDataset> {
    let window = INPUT_WINDOW;
    let t = series.timesteps();
    let needed = window + horizon_steps;
    if horizon_steps == 0 {
        return Err(Error::input("horizon must be at least one step"));
    }
    if t < needed {
        return Err(Error::input(format!(
            "series has {t} timesteps; horizon {horizon_steps} needs at least {needed}"
        )));
    }
    let samples = t - window - horizon_steps + 1;
    let split = SplitBounds::chronological(samples);
    let rows = train_rows(&split, window, horizon_steps);
    let normalizer = Normalizer::fit(series.values.slice(s![rows, ..]))?;
    let normalized = series.values.mapv(|v| normalizer.apply(v));
    Ok(WindowedDataset {
        raw: series.values.clone(),
        normalized,
        horizon_steps,
        window,
        split,
        normalizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
        p
    }

    #[test]
    fn load_known_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "s.csv", "a,b\n1.5,2\n3,4.25\n60,0\n");
        let s = load_series(&p).unwrap();
        assert_eq!(s.values, array![[1.5, 2.0], [3.0, 4.25], [60.0, 0.0]]);
        assert_eq!(s.sensor_ids, vec!["a", "b"]);
    }

    #[test]
    fn load_errors_name_the_cell() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "nan.csv", "a,b\n1,2\n3,NaN\n");
        match load_series(&p).unwrap_err() {
            Error::Parse { row, column, .. } => assert_eq!((row, column), (3, 2)),
            e => panic!("unexpected {e}"),
        }
        let p = write(&dir, "ragged.csv", "a,b\n1,2\n3\n");
        assert!(matches!(
            load_series(&p).unwrap_err(),
            Error::Parse { row: 3, .. }
        ));
        let p = write(&dir, "text.csv", "a,b\n1,x\n");
        assert!(matches!(
            load_series(&p).unwrap_err(),
            Error::Parse {
                row: 2,
                column: 2,
                ..
            }
        ));
        let p = write(&dir, "empty.csv", "");
        assert!(load_series(&p).is_err());
    }

    #[test]
    fn normalizer_examples() {
        let n = Normalizer::fit(array![[2.0], [4.0]].view()).unwrap();
        assert_eq!((n.mean, n.std), (3.0, 1.0));
        assert_eq!(n.apply(4.0), 1.0);
        assert_eq!(n.apply(n.mean), 0.0);
        assert!(Normalizer::fit(array![[5.0, 5.0]].view()).is_err());
    }

    fn series(t: usize, n: usize, f: impl Fn(usize, usize) -> f64) -> SpeedSeries {
        let values = Array2::from_shape_fn((t, n), |(i, j)| f(i, j));
        SpeedSeries::new(values, (0..n).map(|i| i.to_string()).collect()).unwrap()
    }

    #[test]
    fn window_index_arithmetic() {
        let s = series(15, 2, |t, j| (t * 10 + j) as f64);
        let d = make_windows(&s, 3).unwrap();
        assert_eq!(d.samples(), 1);
        assert_eq!(d.target_row(0), 14);
        assert_eq!(d.input(0).nrows(), 12);
        assert_eq!(d.normalizer.invert(d.input(0)[[11, 0]]), 110.0);

        let err = make_windows(&series(14, 2, |t, _| t as f64), 3).unwrap_err();
        assert!(err.to_string().contains("at least 15"));
    }

    #[test]
    fn ramp_target_is_last_input_plus_horizon_slope() {
        let slope = 0.25;
        let s = series(200, 1, |t, _| 10.0 + slope * t as f64);
        for h in [3, 6, 12] {
            let d = make_windows(&s, h).unwrap();
            for sample in [0, 17, d.samples() - 1] {
                let last = d.normalizer.invert(d.input(sample)[[11, 0]]);
                let target = d.raw_target(sample)[0];
                assert!((target - (last + h as f64 * slope)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn split_is_chronological_and_leak_free() {
        let s = series(1000, 3, |t, j| ((t * 7 + j * 3) % 50) as f64 + 1.0);
        let d = make_windows(&s, 12).unwrap();
        let b = &d.split;
        assert!(b.train.end <= b.val.start && b.val.end <= b.test.start);
        assert!(b.train.end - 1 < b.val.start && b.val.end - 1 < b.test.start);
        let samples = d.samples();
        assert!((b.train.len() as f64 - 0.7 * samples as f64).abs() <= 1.0);
        assert!((b.val.len() as f64 - 0.15 * samples as f64).abs() <= 1.0);
        assert!((b.test.len() as f64 - 0.15 * samples as f64).abs() <= 1.0);
        // normalizer only sees rows strictly before the first val target
        assert!(d.train_rows().end <= d.target_row(b.val.start));
        let refit = Normalizer::fit(s.values.slice(s![d.train_rows(), ..])).unwrap();
        assert_eq!(refit, d.normalizer);
    }
}
