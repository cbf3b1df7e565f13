//! Sensor graph construction: distances, Gaussian-kernel adjacency, the
//! rescaled normalized Laplacian and its Chebyshev polynomial basis.

use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius used by [`haversine_km`].
pub const EARTH_RADIUS_KM: f64 = 6371.0;

const POWER_ITERATIONS: usize = 20_000;
const POWER_TOLERANCE: f64 = 1e-10;

/// Geographic position in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coord {
    pub lat: f64,
    pub lon: f64,
}

impl Coord {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::input(format!(
                "coordinate out of range: lat {} lon {}",
                self.lat, self.lon
            )));
        }
        Ok(())
    }

    /// Offsets this point by planar kilometres (east, north) using a local
    /// equirectangular approximation. Only meant for generating layouts.
    pub fn offset_km(&self, east_km: f64, north_km: f64) -> Coord {
        let dlat = north_km / EARTH_RADIUS_KM;
        let dlon = east_km / (EARTH_RADIUS_KM * self.lat.to_radians().cos());
        Coord::new(self.lat + dlat.to_degrees(), self.lon + dlon.to_degrees())
    }

    /// Inverse of [`Coord::offset_km`] relative to `origin`.
    pub fn planar_km(&self, origin: &Coord) -> (f64, f64) {
        let north = (self.lat - origin.lat).to_radians() * EARTH_RADIUS_KM;
        let east =
            (self.lon - origin.lon).to_radians() * EARTH_RADIUS_KM * origin.lat.to_radians().cos();
        (east, north)
    }
}

/// Great-circle distance between two points.
pub fn haversine_km(a: Coord, b: Coord) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    Ok(2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin())
}

/// Pairwise haversine distances.
pub fn distance_matrix(coords: &[Coord]) -> Result<Array2<f64>> {
    let n = coords.len();
    let mut dist = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let d = haversine_km(coords[i], coords[j])?;
            dist[[i, j]] = d;
            dist[[j, i]] = d;
        }
    }
    Ok(dist)
}

/// Distances from an explicit road edge list. Pairs not listed are
/// unreachable (infinite distance). A pair listed in one direction only is
/// mirrored; pairs listed in both directions are kept as given.
pub fn distance_matrix_from_edges(ids: &[String], edges: &[RoadEdge]) -> Result<Array2<f64>> {
    let n = ids.len();
    let index = |id: &str| {
        ids.iter()
            .position(|s| s == id)
            .ok_or_else(|| Error::input(format!("edge references unknown sensor `{id}`")))
    };
    let mut dist = Array2::from_elem((n, n), f64::INFINITY);
    let mut given = Array2::from_elem((n, n), false);
    for i in 0..n {
        dist[[i, i]] = 0.0;
    }
    for e in edges {
        let (i, j) = (index(&e.from_id)?, index(&e.to_id)?);
        if !(e.dist_km >= 0.0) {
            return Err(Error::input(format!(
                "negative or NaN distance on edge {}->{}",
                e.from_id, e.to_id
            )));
        }
        if i == j {
            continue;
        }
        dist[[i, j]] = e.dist_km;
        given[[i, j]] = true;
        if !given[[j, i]] {
            dist[[j, i]] = e.dist_km;
        }
    }
    Ok(dist)
}

/// Population variance of all finite off-diagonal distances; the default
/// kernel width.
pub fn default_sigma2(dist: &Array2<f64>) -> f64 {
    let n = dist.nrows();
    let vals: Vec<f64> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .map(|(i, j)| dist[[i, j]])
        .filter(|d| d.is_finite())
        .collect();
    if vals.is_empty() {
        return 1.0;
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / vals.len() as f64;
    if var > 0.0 {
        var
    } else {
        1.0
    }
}

fn check_square(m: &Array2<f64>, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::shape(what, m.nrows(), m.ncols()));
    }
    Ok(m.nrows())
}

/// Gaussian-kernel adjacency `exp(-d^2 / sigma2)`, zeroed below `epsilon`
/// and on the diagonal.
pub fn build_adjacency(dist: &Array2<f64>, sigma2: f64, epsilon: f64) -> Result<Array2<f64>> {
    let n = check_square(dist, "distance matrix")?;
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::input(format!(
            "sigma2 must be positive, got {sigma2}"
        )));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::input(format!(
            "epsilon must be in [0, 1), got {epsilon}"
        )));
    }
    for i in 0..n {
        if dist[[i, i]] != 0.0 {
            return Err(Error::input(format!(
                "distance diagonal at {i} is not zero"
            )));
        }
        for j in 0..n {
            let (a, b) = (dist[[i, j]], dist[[j, i]]);
            if !(a >= 0.0) {
                return Err(Error::input(format!(
                    "negative or NaN distance at ({i}, {j})"
                )));
            }
            if a != b {
                return Err(Error::input(format!(
                    "distance matrix is not symmetric at ({i}, {j}): {a} vs {b}"
                )));
            }
        }
    }
    let mut w = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = dist[[i, j]];
            let k = (-(d * d) / sigma2).exp();
            if k >= epsilon && k > 0.0 {
                w[[i, j]] = k;
            }
        }
    }
    Ok(w)
}

/// Rescaled symmetric-normalized Laplacian `2 L / lambda_max - I`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledLaplacian {
    pub matrix: Array2<f64>,
    pub lambda_max: f64,
}

impl ScaledLaplacian {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// Principal submatrix on `nodes`, keeping the full-graph degrees and
    /// `lambda_max` baked into the entries.
    pub fn restrict(&self, nodes: &[usize]) -> ScaledLaplacian {
        let m = nodes.len();
        let mut sub = Array2::zeros((m, m));
        for (a, &i) in nodes.iter().enumerate() {
            for (b, &j) in nodes.iter().enumerate() {
                sub[[a, b]] = self.matrix[[i, j]];
            }
        }
        ScaledLaplacian {
            matrix: sub,
            lambda_max: self.lambda_max,
        }
    }
}

/// `I - D^-1/2 W D^-1/2`; rows of isolated nodes become identity rows.
pub fn normalized_laplacian(w: &Array2<f64>) -> Result<Array2<f64>> {
    let n = check_square(w, "adjacency")?;
    let deg: Vec<f64> = w.sum_axis(Axis(1)).to_vec();
    let inv_sqrt: Vec<f64> = deg
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut l = Array2::zeros((n, n));
    for i in 0..n {
        l[[i, i]] = 1.0;
        for j in 0..n {
            if i != j && w[[i, j]] != 0.0 {
                l[[i, j]] = -w[[i, j]] * inv_sqrt[i] * inv_sqrt[j];
            }
        }
    }
    Ok(l)
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix by power
/// iteration.
pub fn power_iteration_lambda_max(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    // Golden-ratio fractional parts: deterministic and not aligned with the
    // degree-weighted null vector.
    let mut v: Vec<f64> = (0..n)
        .map(|i| 0.5 + ((i as f64 + 1.0) * 0.618_033_988_749_895).fract())
        .collect();
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let w: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| m[[i, j]] * v[j]).sum())
            .collect();
        let vv: f64 = v.iter().map(|x| x * x).sum();
        let next = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / vv;
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        // stop on the eigen-residual; a stalled Rayleigh quotient is not
        // convergence when the spectral gap is small
        let residual = v
            .iter()
            .zip(&w)
            .map(|(a, b)| (b - next * a).powi(2))
            .sum::<f64>()
            .sqrt()
            / vv.sqrt();
        v = w.into_iter().map(|x| x / norm).collect();
        lambda = next;
        if residual <= POWER_TOLERANCE * next.abs().max(1.0) {
            break;
        }
    }
    lambda
}

pub fn scaled_laplacian(w: &Array2<f64>) -> Result<ScaledLaplacian> {
    let l = normalized_laplacian(w)?;
    let n = l.nrows();
    let lambda_max = power_iteration_lambda_max(&l);
    let lambda = if lambda_max > 0.0 { lambda_max } else { 1.0 };
    let mut matrix = l * (2.0 / lambda);
    for i in 0..n {
        matrix[[i, i]] -= 1.0;
    }
    Ok(ScaledLaplacian {
        matrix,
        lambda_max: lambda,
    })
}

/// Chebyshev polynomials `T_0 .. T_{K-1}` of the rescaled Laplacian.
pub fn cheb_basis(l_tilde: &Array2<f64>, k: usize) -> Result<Vec<Array2<f64>>> {
    if k == 0 {
        return Err(Error::input("Chebyshev order count K must be at least 1"));
    }
    let n = check_square(l_tilde, "scaled Laplacian")?;
    let mut basis = Vec::with_capacity(k);
    basis.push(Array2::eye(n));
    if k > 1 {
        basis.push(l_tilde.clone());
    }
    for i in 2..k {
        let next = l_tilde.dot(&basis[i - 1]) * 2.0 - &basis[i - 2];
        basis.push(next);
    }
    Ok(basis)
}

/// A row of the optional road-distance edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadEdge {
    pub from_id: String,
    pub to_id: String,
    pub dist_km: f64,
}

/// Sensors with positions, distances and kernel weights.
#[derive(Debug, Clone)]
pub struct SensorGraph {
    pub ids: Vec<String>,
    pub coords: Vec<Coord>,
    pub dist: Array2<f64>,
    pub weights: Array2<f64>,
}

impl SensorGraph {
    /// Builds the graph from coordinates, or from `edges` when a road
    /// distance list is available. `sigma2 = None` selects the distance
    /// variance.
    pub fn build(
        ids: Vec<String>,
        coords: Vec<Coord>,
        edges: Option<&[RoadEdge]>,
        sigma2: Option<f64>,
        epsilon: f64,
    ) -> Result<Self> {
        if ids.len() != coords.len() {
            return Err(Error::shape("sensor coordinates", ids.len(), coords.len()));
        }
        let dist = match edges {
            Some(edges) => distance_matrix_from_edges(&ids, edges)?,
            None => distance_matrix(&coords)?,
        };
        let sigma2 = sigma2.unwrap_or_else(|| default_sigma2(&dist));
        let weights = build_adjacency(&dist, sigma2, epsilon)?;
        Ok(Self {
            ids,
            coords,
            dist,
            weights,
        })
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn scaled_laplacian(&self) -> Result<ScaledLaplacian> {
        scaled_laplacian(&self.weights)
    }

    /// Neighbour lists of the nonzero weight pattern, ascending.
    pub fn neighbours(&self) -> Vec<Vec<usize>> {
        let n = self.n();
        (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i && self.weights[[i, j]] != 0.0)
                    .collect()
            })
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbours().iter().map(Vec::len).sum::<usize>() / 2
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SensorRow {
    sensor_id: String,
    lat: f64,
    lon: f64,
}

/// Reads `sensor_id,lat,lon`.
pub fn read_sensors(path: &Path) -> Result<(Vec<String>, Vec<Coord>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut ids = Vec::new();
    let mut coords = Vec::new();
    for (row, rec) in rdr.deserialize::<SensorRow>().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.display().to_string(),
            row: row + 2,
            column: 0,
            message: e.to_string(),
        })?;
        let c = Coord::new(rec.lat, rec.lon);
        c.validate()?;
        ids.push(rec.sensor_id);
        coords.push(c);
    }
    Ok((ids, coords))
}

pub fn write_sensors(path: &Path, ids: &[String], coords: &[Coord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (id, c) in ids.iter().zip(coords) {
        w.serialize(SensorRow {
            sensor_id: id.clone(),
            lat: c.lat,
            lon: c.lon,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads `from_id,to_id,dist_km`.
pub fn read_edges(path: &Path) -> Result<Vec<RoadEdge>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize::<RoadEdge>()
        .enumerate()
        .map(|(row, rec)| {
            rec.map_err(|e| Error::Parse {
                path: path.display().to_string(),
                row: row + 2,
                column: 0,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn haversine_identity_and_antipode() {
        let o = Coord::new(0.0, 0.0);
        assert_eq!(haversine_km(o, o).unwrap(), 0.0);
        let half = haversine_km(o, Coord::new(0.0, 180.0)).unwrap();
        assert!((half - std::f64::consts::PI * EARTH_RADIUS_KM).abs() < 1e-6);
        assert!((half - 20015.1).abs() < 0.1);
    }

    #[test]
    fn haversine_rejects_out_of_range() {
        assert!(haversine_km(Coord::new(91.0, 0.0), Coord::new(0.0, 0.0)).is_err());
        assert!(haversine_km(Coord::new(0.0, 0.0), Coord::new(0.0, -180.5)).is_err());
    }

    #[test]
    fn adjacency_examples() {
        let w = build_adjacency(&array![[0.0, 0.0], [0.0, 0.0]], 1.0, 0.1).unwrap();
        assert_eq!(w[[0, 1]], 1.0);
        assert_eq!(w[[0, 0]], 0.0);

        let w = build_adjacency(&array![[0.0, 1.0], [1.0, 0.0]], 1.0, 0.1).unwrap();
        assert!((w[[0, 1]] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((w[[0, 1]] - 0.3679).abs() < 1e-4);
    }

    #[test]
    fn adjacency_threshold_boundary() {
        let eps: f64 = 0.1;
        // exp(-d^2) = eps - 1e-9
        let d = (-(eps - 1e-9).ln()).sqrt();
        let w = build_adjacency(&array![[0.0, d], [d, 0.0]], 1.0, eps).unwrap();
        assert_eq!(w[[0, 1]], 0.0);
    }

    #[test]
    fn adjacency_rejects_asymmetric() {
        let err = build_adjacency(&array![[0.0, 1.0], [2.0, 0.0]], 1.0, 0.1).unwrap_err();
        assert!(err.to_string().contains("symmetric"));
    }

    #[test]
    fn laplacian_small_cases() {
        let s = scaled_laplacian(&array![[0.0]]).unwrap();
        assert_eq!(s.lambda_max, 1.0);
        assert_eq!(s.matrix, array![[1.0]]);

        let s = scaled_laplacian(&array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!((s.lambda_max - 2.0).abs() < 1e-12);
        let expected = array![[0.0, -1.0], [-1.0, 0.0]];
        for (a, b) in s.matrix.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn isolated_node_has_identity_row() {
        let w = array![[0.0, 0.5, 0.0], [0.5, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let l = normalized_laplacian(&w).unwrap();
        assert_eq!(l.row(2).to_vec(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn cheb_basis_cases() {
        assert!(cheb_basis(&array![[0.0]], 0).is_err());
        let lt = array![[0.2, -0.3], [-0.3, 0.1]];
        let b = cheb_basis(&lt, 1).unwrap();
        assert_eq!(b, vec![Array2::<f64>::eye(2)]);
        let b = cheb_basis(&lt, 2).unwrap();
        assert_eq!(b[1], lt);

        let diag = Array2::from_diag(&array![-1.0, 0.0, 1.0]);
        let b = cheb_basis(&diag, 3).unwrap();
        let scalar_t2 = |x: f64| 2.0 * x * x - 1.0;
        assert_eq!(
            b[2],
            Array2::from_diag(&array![scalar_t2(-1.0), scalar_t2(0.0), scalar_t2(1.0)])
        );
        assert_eq!(b[2], Array2::from_diag(&array![1.0, -1.0, 1.0]));
    }

    #[test]
    fn edge_list_missing_pairs_are_unreachable() {
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let edges = vec![RoadEdge {
            from_id: "a".into(),
            to_id: "b".into(),
            dist_km: 1.0,
        }];
        let d = distance_matrix_from_edges(&ids, &edges).unwrap();
        assert_eq!(d[[1, 0]], 1.0);
        assert!(d[[0, 2]].is_infinite());
        let w = build_adjacency(&d, 1.0, 0.1).unwrap();
        assert_eq!(w[[0, 2]], 0.0);
        assert!(w[[0, 1]] > 0.0);
    }
}
