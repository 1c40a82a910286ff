//! Demonstration datasets: containers, standardization, trimming,
//! composition, and a plain-text trajectory interchange format.
//!
//! A [`Trajectory`] stores `(t, x, dx/dt)` samples; a [`Dataset`] is a set of
//! trajectories of equal state dimension plus optional standardization
//! statistics and provenance metadata. The CSV format is
//! `traj_id,t,x0,...,x{d-1},v0,...,v{d-1}` with `#` comments, rows grouped by
//! trajectory with strictly increasing time; a `.meta.json` sidecar carries
//! generator name, configuration, seed, and standardization statistics.

pub mod pendulum;
pub mod rosenbrock;
pub mod toy;

use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ── Trajectory ──────────────────────────────────────────────────────────────

/// One demonstration: times, states, and velocities. States and velocities
/// are stored row-major (`sample * dim + coordinate`).
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    dim: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    velocities: Vec<f64>,
}

impl Trajectory {
    pub fn new(dim: usize) -> Trajectory {
        Trajectory {
            dim,
            times: Vec::new(),
            states: Vec::new(),
            velocities: Vec::new(),
        }
    }

    pub fn push(&mut self, t: f64, state: &[f64], velocity: &[f64]) {
        assert_eq!(state.len(), self.dim, "state length {} vs dim {}", state.len(), self.dim);
        assert_eq!(velocity.len(), self.dim);
        if let Some(&last) = self.times.last() {
            assert!(t > last, "times must be strictly increasing ({t} after {last})");
        }
        self.times.push(t);
        self.states.extend_from_slice(state);
        self.velocities.extend_from_slice(velocity);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn velocity(&self, i: usize) -> &[f64] {
        &self.velocities[i * self.dim..(i + 1) * self.dim]
    }

    pub fn first_state(&self) -> &[f64] {
        self.state(0)
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn duration(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[self.times.len() - 1] - self.times[0]
        }
    }

    /// Median spacing between consecutive samples.
    pub fn median_dt(&self) -> f64 {
        if self.times.len() < 2 {
            return 0.0;
        }
        let mut gaps: Vec<f64> = self.times.windows(2).map(|w| w[1] - w[0]).collect();
        gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        gaps[gaps.len() / 2]
    }

    pub fn all_finite(&self) -> bool {
        self.times.iter().all(|v| v.is_finite())
            && self.states.iter().all(|v| v.is_finite())
            && self.velocities.iter().all(|v| v.is_finite())
    }

    /// Linear-interpolation resample onto `n` uniformly spaced times across
    /// the trajectory's own duration.
    pub fn resample(&self, n: usize) -> Trajectory {
        assert!(n >= 2 && self.len() >= 2, "resample needs at least 2 samples");
        let t0 = self.times[0];
        let t1 = self.times[self.len() - 1];
        let mut out = Trajectory::new(self.dim);
        let mut seg = 0;
        for k in 0..n {
            let t = t0 + (t1 - t0) * k as f64 / (n - 1) as f64;
            while seg + 2 < self.len() && self.times[seg + 1] <= t {
                seg += 1;
            }
            let (ta, tb) = (self.times[seg], self.times[seg + 1]);
            let w = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
            let mut state = vec![0.0; self.dim];
            let mut vel = vec![0.0; self.dim];
            for i in 0..self.dim {
                state[i] = self.state(seg)[i] * (1.0 - w) + self.state(seg + 1)[i] * w;
                vel[i] = self.velocity(seg)[i] * (1.0 - w) + self.velocity(seg + 1)[i] * w;
            }
            out.push(t, &state, &vel);
        }
        out
    }
}

// ── Dataset ─────────────────────────────────────────────────────────────────

/// Per-dimension affine normalization: `x -> (x - mean) / std`, velocities
/// scale by `1 / std`, times untouched.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Provenance carried in the `.meta.json` sidecar.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator: String,
    #[serde(default)]
    pub config: serde_json::Value,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct SidecarFile {
    #[serde(flatten)]
    meta: DatasetMeta,
    #[serde(default)]
    standardization: Option<Standardization>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    /// Statistics applied to produce this dataset's coordinates (`None`
    /// until [`Dataset::standardize`] is used).
    pub standardization: Option<Standardization>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Dataset {
        if let Some(first) = trajectories.first() {
            assert!(
                trajectories.iter().all(|t| t.dim() == first.dim()),
                "all trajectories must share one state dimension"
            );
        }
        Dataset {
            trajectories,
            standardization: None,
            meta: DatasetMeta::default(),
        }
    }

    pub fn with_meta(mut self, generator: &str, config: serde_json::Value, seed: Option<u64>) -> Dataset {
        self.meta = DatasetMeta {
            generator: generator.to_string(),
            config,
            seed,
        };
        self
    }

    pub fn dim(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.dim())
    }

    pub fn n_samples(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }

    /// Iterate over every `(state, velocity)` pair, pooled across
    /// trajectories in order.
    pub fn samples(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.trajectories
            .iter()
            .flat_map(|t| (0..t.len()).map(move |i| (t.state(i), t.velocity(i))))
    }

    /// Pooled per-dimension mean and population standard deviation.
    pub fn pooled_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let n = self.n_samples() as f64;
        let mut mean = vec![0.0; d];
        for (x, _) in self.samples() {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; d];
        for (x, _) in self.samples() {
            for i in 0..d {
                let c = x[i] - mean[i];
                var[i] += c * c;
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt()).collect();
        (mean, std)
    }

    /// Mean of the trajectories' final states — the estimate of the shared
    /// attractor used as the model equilibrium.
    pub fn mean_final_state(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d];
        for t in &self.trajectories {
            for (o, v) in out.iter_mut().zip(t.last_state()) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= self.trajectories.len() as f64;
        }
        out
    }

    /// Standardize states to pooled mean 0 / std 1 per dimension (velocities
    /// scale by `1/std`, times untouched). Returns the transformed dataset
    /// and the statistics needed to undo it.
    pub fn standardize(&self) -> Result<(Dataset, Standardization)> {
        let (mean, std) = self.pooled_stats();
        for (i, s) in std.iter().enumerate() {
            if !(*s > 0.0) {
                return Err(Error::Config(format!(
                    "cannot standardize: dimension {i} has zero variance"
                )));
            }
        }
        let stats = Standardization { mean, std };
        let mut out = self.map_coords(
            |i, x| (x - stats.mean[i]) / stats.std[i],
            |i, v| v / stats.std[i],
        );
        out.standardization = Some(stats.clone());
        Ok((out, stats))
    }

    /// Apply existing standardization statistics (for example the stats a
    /// model was trained under, read back from its checkpoint): states map
    /// to `(x - mean) / std`, velocities scale by `1 / std`.
    pub fn standardize_with(&self, stats: &Standardization) -> Result<Dataset> {
        let d = self.dim();
        if stats.mean.len() != d || stats.std.len() != d {
            return Err(Error::DimensionMismatch {
                context: "standardization statistics",
                expected: d,
                got: stats.mean.len().min(stats.std.len()),
            });
        }
        let mut out = self.map_coords(
            |i, x| (x - stats.mean[i]) / stats.std[i],
            |i, v| v / stats.std[i],
        );
        out.standardization = Some(stats.clone());
        Ok(out)
    }

    /// Undo [`Dataset::standardize`] with the recorded statistics.
    pub fn destandardize(&self, stats: &Standardization) -> Dataset {
        let mut out = self.map_coords(
            |i, x| x * stats.std[i] + stats.mean[i],
            |i, v| v * stats.std[i],
        );
        out.standardization = None;
        out
    }

    fn map_coords(
        &self,
        state_map: impl Fn(usize, f64) -> f64,
        vel_map: impl Fn(usize, f64) -> f64,
    ) -> Dataset {
        let d = self.dim();
        let trajectories = self
            .trajectories
            .iter()
            .map(|t| {
                let mut nt = Trajectory::new(d);
                for k in 0..t.len() {
                    let state: Vec<f64> = t
                        .state(k)
                        .iter()
                        .enumerate()
                        .map(|(i, &x)| state_map(i, x))
                        .collect();
                    let vel: Vec<f64> = t
                        .velocity(k)
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| vel_map(i, v))
                        .collect();
                    nt.push(t.time(k), &state, &vel);
                }
                nt
            })
            .collect();
        Dataset {
            trajectories,
            standardization: self.standardization.clone(),
            meta: self.meta.clone(),
        }
    }

    /// Drop the first `count` samples of every trajectory (demonstrations
    /// often idle at the start; after trimming only the target should have
    /// near-zero velocity).
    pub fn trim_initial(&self, count: usize) -> Result<Dataset> {
        let shortest = self.trajectories.iter().map(|t| t.len()).min().unwrap_or(0);
        if count >= shortest {
            return Err(Error::Config(format!(
                "cannot trim {count} samples: shortest trajectory has {shortest}"
            )));
        }
        let trajectories = self
            .trajectories
            .iter()
            .map(|t| {
                let mut nt = Trajectory::new(t.dim());
                for k in count..t.len() {
                    nt.push(t.time(k), t.state(k), t.velocity(k));
                }
                nt
            })
            .collect();
        Ok(Dataset {
            trajectories,
            standardization: self.standardization.clone(),
            meta: self.meta.clone(),
        })
    }

    /// Stack datasets dimension-wise into a product system: trajectory `i`
    /// of each part is resampled to a common length and its states and
    /// velocities are concatenated. Times come from the first part's grid;
    /// velocities of the others are rescaled by their duration ratio (chain
    /// rule under the time reparameterization).
    pub fn compose(parts: &[Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Config("compose needs at least one dataset".into()))?;
        let n_traj = first.trajectories.len();
        if parts.iter().any(|p| p.trajectories.len() != n_traj) {
            return Err(Error::Config(format!(
                "compose: all datasets must have the same trajectory count (first has {n_traj})"
            )));
        }
        if n_traj == 0 {
            return Err(Error::Config("compose: empty datasets".into()));
        }
        let mut trajectories = Vec::with_capacity(n_traj);
        for i in 0..n_traj {
            let len = parts
                .iter()
                .map(|p| p.trajectories[i].len())
                .min()
                .unwrap();
            if len < 2 {
                return Err(Error::Config(format!(
                    "compose: trajectory {i} too short to resample"
                )));
            }
            let resampled: Vec<Trajectory> =
                parts.iter().map(|p| p.trajectories[i].resample(len)).collect();
            let base = &resampled[0];
            let base_duration = base.duration();
            let dim: usize = resampled.iter().map(|t| t.dim()).sum();
            let mut nt = Trajectory::new(dim);
            for k in 0..len {
                let mut state = Vec::with_capacity(dim);
                let mut vel = Vec::with_capacity(dim);
                for t in &resampled {
                    let scale = if base_duration > 0.0 {
                        t.duration() / base_duration
                    } else {
                        1.0
                    };
                    state.extend_from_slice(t.state(k));
                    vel.extend(t.velocity(k).iter().map(|v| v * scale));
                }
                nt.push(base.time(k), &state, &vel);
            }
            trajectories.push(nt);
        }
        Ok(Dataset::new(trajectories).with_meta(
            "compose",
            serde_json::json!({
                "parts": parts.iter().map(|p| p.meta.generator.clone()).collect::<Vec<_>>(),
            }),
            None,
        ))
    }

    // ── CSV interchange ─────────────────────────────────────────────────────

    fn header_for(dim: usize) -> String {
        let mut h = String::from("traj_id,t");
        for i in 0..dim {
            h.push_str(&format!(",x{i}"));
        }
        for i in 0..dim {
            h.push_str(&format!(",v{i}"));
        }
        h
    }

    fn sidecar_path(path: &Path) -> PathBuf {
        path.with_extension("meta.json")
    }

    /// Write the trajectory CSV plus its `.meta.json` sidecar.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let d = self.dim();
        let mut out = String::new();
        out.push_str(&Self::header_for(d));
        out.push('\n');
        for (id, t) in self.trajectories.iter().enumerate() {
            for k in 0..t.len() {
                out.push_str(&format!("{id},{}", t.time(k)));
                for v in t.state(k) {
                    out.push_str(&format!(",{v}"));
                }
                for v in t.velocity(k) {
                    out.push_str(&format!(",{v}"));
                }
                out.push('\n');
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;

        let sidecar = SidecarFile {
            meta: self.meta.clone(),
            standardization: self.standardization.clone(),
        };
        let sidecar_path = Self::sidecar_path(path);
        std::fs::write(&sidecar_path, serde_json::to_string_pretty(&sidecar)?)
            .map_err(|e| Error::io(sidecar_path.clone(), e))?;
        Ok(())
    }

    /// Read a trajectory CSV (and its sidecar when present). Trajectories
    /// are ordered by `traj_id`, so block order in the file does not matter.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        let (hline, header) = lines
            .next()
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: "empty file (expected a header row)".into(),
            })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 4 || cols.len() % 2 != 0 || cols[0] != "traj_id" || cols[1] != "t" {
            return Err(Error::Parse {
                line: hline,
                message: format!(
                    "bad header '{header}': expected 'traj_id,t,x0,...,x{{d-1}},v0,...,v{{d-1}}'"
                ),
            });
        }
        let d = (cols.len() - 2) / 2;
        for i in 0..d {
            if cols[2 + i] != format!("x{i}") || cols[2 + d + i] != format!("v{i}") {
                return Err(Error::Parse {
                    line: hline,
                    message: format!(
                        "bad header '{header}': expected columns x0..x{} then v0..v{}",
                        d - 1,
                        d - 1
                    ),
                });
            }
        }

        let mut groups: std::collections::BTreeMap<usize, Trajectory> =
            std::collections::BTreeMap::new();
        for (lineno, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected {} fields, found {}", cols.len(), fields.len()),
                });
            }
            let parse_f = |s: &str, what: &str| -> Result<f64> {
                let v: f64 = s.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("cannot parse {what} '{s}' as a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("non-finite {what} '{s}'"),
                    });
                }
                Ok(v)
            };
            let id: usize = fields[0].parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("cannot parse traj_id '{}'", fields[0]),
            })?;
            let t = parse_f(fields[1], "time")?;
            let mut state = Vec::with_capacity(d);
            let mut vel = Vec::with_capacity(d);
            for i in 0..d {
                state.push(parse_f(fields[2 + i], "state")?);
                vel.push(parse_f(fields[2 + d + i], "velocity")?);
            }
            let traj = groups.entry(id).or_insert_with(|| Trajectory::new(d));
            if let Some(&last) = traj.times().last() {
                if t <= last {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!(
                            "time {t} not strictly increasing within traj_id {id} (previous {last})"
                        ),
                    });
                }
            }
            traj.push(t, &state, &vel);
        }
        if groups.is_empty() {
            return Err(Error::Parse {
                line: hline,
                message: "no data rows".into(),
            });
        }
        let mut ds = Dataset::new(groups.into_values().collect());

        let sidecar_path = Self::sidecar_path(path);
        if sidecar_path.exists() {
            let text =
                std::fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
            let sidecar: SidecarFile = serde_json::from_str(&text)?;
            ds.meta = sidecar.meta;
            ds.standardization = sidecar.standardization;
        }
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy_dataset() -> Dataset {
        toy::gen_toy_linear()
    }

    #[test]
    fn standardize_centers_and_scales_pooled_moments() {
        let ds = toy_dataset();
        let (std_ds, stats) = ds.standardize().unwrap();
        let (mean, std) = std_ds.pooled_stats();
        for (i, m) in mean.iter().enumerate() {
            assert!(m.abs() <= 1e-9, "dimension {i} mean {m}");
            assert!((std[i] - 1.0).abs() <= 1e-9, "dimension {i} std {}", std[i]);
        }
        // Velocities scale by 1/std.
        let orig_v = ds.trajectories[0].velocity(3)[0];
        let new_v = std_ds.trajectories[0].velocity(3)[0];
        assert!((new_v - orig_v / stats.std[0]).abs() <= 1e-12);
        // Round trip.
        let back = std_ds.destandardize(&stats);
        for (a, b) in back.samples().zip(ds.samples()) {
            for (x, y) in a.0.iter().zip(b.0) {
                assert!((x - y).abs() <= 1e-12);
            }
            for (x, y) in a.1.iter().zip(b.1) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn standardize_rejects_zero_variance() {
        let mut t = Trajectory::new(2);
        t.push(0.0, &[1.0, 5.0], &[0.0, 0.0]);
        t.push(1.0, &[2.0, 5.0], &[0.0, 0.0]);
        let err = Dataset::new(vec![t]).standardize().unwrap_err();
        assert!(err.to_string().contains("dimension 1"));
    }

    #[test]
    fn trim_drops_leading_samples() {
        let ds = toy_dataset();
        let len0 = ds.trajectories[0].len();
        let t3 = ds.trajectories[0].time(3);
        let trimmed = ds.trim_initial(3).unwrap();
        assert_eq!(trimmed.trajectories[0].len(), len0 - 3);
        assert_eq!(trimmed.trajectories[0].time(0), t3);
        assert!(ds.trim_initial(len0).is_err());
        let zero = ds.trim_initial(0).unwrap();
        assert_eq!(zero.trajectories[0].len(), len0);
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let dir = std::env::temp_dir().join("elcd_data_tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("toy.csv");
        let ds = toy_dataset();
        ds.save_csv(&path).unwrap();
        let back = Dataset::load_csv(&path).unwrap();
        assert_eq!(back.trajectories.len(), ds.trajectories.len());
        assert_eq!(back.meta.generator, ds.meta.generator);
        for (a, b) in back.trajectories.iter().zip(&ds.trajectories) {
            assert_eq!(a.len(), b.len());
            for k in 0..a.len() {
                assert_eq!(a.time(k).to_bits(), b.time(k).to_bits());
                for (x, y) in a.state(k).iter().zip(b.state(k)) {
                    assert_eq!(x.to_bits(), y.to_bits(), "states differ at sample {k}");
                }
                for (x, y) in a.velocity(k).iter().zip(b.velocity(k)) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }

    #[test]
    fn csv_block_order_does_not_matter() {
        let dir = std::env::temp_dir().join("elcd_data_tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("shuffled.csv");
        std::fs::write(
            &path,
            "traj_id,t,x0,v0\n\
             # second block first\n\
             1,0.0,10.0,-1.0\n\
             1,0.5,9.5,-1.0\n\
             0,0.0,1.0,2.0\n\
             0,1.0,3.0,2.0\n",
        )
        .unwrap();
        let ds = Dataset::load_csv(&path).unwrap();
        assert_eq!(ds.trajectories.len(), 2);
        assert_eq!(ds.trajectories[0].state(0), &[1.0]);
        assert_eq!(ds.trajectories[1].state(0), &[10.0]);
    }

    #[test]
    fn csv_errors_name_the_line_and_expectation() {
        let dir = std::env::temp_dir().join("elcd_data_tests");
        std::fs::create_dir_all(&dir).unwrap();

        let missing_vel = dir.join("missing_vel.csv");
        std::fs::write(&missing_vel, "traj_id,t,x0,x1\n0,0.0,1.0,2.0\n").unwrap();
        let err = Dataset::load_csv(&missing_vel).unwrap_err().to_string();
        assert!(err.contains("v0"), "error should name the expected columns: {err}");

        let ragged = dir.join("ragged.csv");
        std::fs::write(&ragged, "traj_id,t,x0,v0\n0,0.0,1.0,2.0\n0,1.0,3.0\n").unwrap();
        let err = Dataset::load_csv(&ragged).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");

        let backwards = dir.join("backwards.csv");
        std::fs::write(
            &backwards,
            "traj_id,t,x0,v0\n0,1.0,1.0,2.0\n0,0.5,3.0,1.0\n",
        )
        .unwrap();
        let err = Dataset::load_csv(&backwards).unwrap_err().to_string();
        assert!(err.contains("strictly increasing"), "{err}");
    }

    #[test]
    fn compose_concatenates_dimensions() {
        let a = toy_dataset();
        let b = toy_dataset();
        let stacked = Dataset::compose(&[a.clone(), b]).unwrap();
        assert_eq!(stacked.dim(), 4);
        assert_eq!(stacked.trajectories.len(), a.trajectories.len());
        let t = &stacked.trajectories[0];
        let o = &a.trajectories[0];
        assert_eq!(t.len(), o.len());
        for k in [0usize, 5, o.len() - 1] {
            assert!((t.state(k)[0] - o.state(k)[0]).abs() <= 1e-9);
            assert!((t.state(k)[2] - o.state(k)[0]).abs() <= 1e-9);
            assert!((t.velocity(k)[3] - o.velocity(k)[1]).abs() <= 1e-9);
        }
    }

    #[test]
    fn resample_preserves_endpoints_and_linearity() {
        let mut t = Trajectory::new(1);
        for k in 0..=10 {
            let tk = k as f64 * 0.1;
            t.push(tk, &[2.0 * tk], &[2.0]);
        }
        let r = t.resample(5);
        assert_eq!(r.len(), 5);
        assert!((r.time(0) - 0.0).abs() <= 1e-15);
        assert!((r.time(4) - 1.0).abs() <= 1e-15);
        for k in 0..5 {
            assert!((r.state(k)[0] - 2.0 * r.time(k)).abs() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn csv_roundtrip_property(
            samples in prop::collection::vec((0.0f64..1e3, -1e6f64..1e6, -1e6f64..1e6), 2..40)
        ) {
            let mut t = Trajectory::new(1);
            let mut time = 0.0;
            for (dt, x, v) in samples {
                time += dt + 1e-6;
                t.push(time, &[x], &[v]);
            }
            let ds = Dataset::new(vec![t]);
            let dir = std::env::temp_dir().join("elcd_data_tests");
            std::fs::create_dir_all(&dir).unwrap();
            let path = dir.join(format!("prop_{}.csv", std::process::id()));
            ds.save_csv(&path).unwrap();
            let back = Dataset::load_csv(&path).unwrap();
            let a = &back.trajectories[0];
            let b = &ds.trajectories[0];
            prop_assert_eq!(a.len(), b.len());
            for k in 0..a.len() {
                prop_assert_eq!(a.time(k).to_bits(), b.time(k).to_bits());
                prop_assert_eq!(a.state(k)[0].to_bits(), b.state(k)[0].to_bits());
                prop_assert_eq!(a.velocity(k)[0].to_bits(), b.velocity(k)[0].to_bits());
            }
        }
    }
}
