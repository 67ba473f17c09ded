//! Trajectory records, delimited-text I/O, matrix assembly and train/test splits.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DMatrixView};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::mat::fmt_f64;

/// Channel names of a trajectory, in matrix row order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelNames {
    pub controls: Vec<String>,
    pub states: Vec<String>,
    pub outputs: Vec<String>,
    pub sched: Option<String>,
}

impl ChannelNames {
    /// `u0.., x0.., y0..` and `w` for the scheduling parameter.
    pub fn generic(n_controls: usize, n_states: usize, n_outputs: usize, sched: bool) -> Self {
        ChannelNames {
            controls: (0..n_controls).map(|i| format!("u{i}")).collect(),
            states: (0..n_states).map(|i| format!("x{i}")).collect(),
            outputs: (0..n_outputs).map(|i| format!("y{i}")).collect(),
            sched: sched.then(|| "w".to_string()),
        }
    }
}

/// One simulation record on a common time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    controls: DMatrix<f64>,
    states: DMatrix<f64>,
    outputs: DMatrix<f64>,
    sched: Option<Vec<f64>>,
    names: ChannelNames,
}

impl Trajectory {
    pub fn new(
        times: Vec<f64>,
        controls: DMatrix<f64>,
        states: DMatrix<f64>,
        outputs: DMatrix<f64>,
        sched: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = times.len();
        check_len("control columns", n, controls.ncols())?;
        check_len("state columns", n, states.ncols())?;
        check_len("output columns", n, outputs.ncols())?;
        if let Some(s) = &sched {
            check_len("scheduling samples", n, s.len())?;
        }
        if let Some(k) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::NonMonotoneTime { row: k + 2 });
        }
        let finite = times.iter().all(|v| v.is_finite())
            && controls.iter().all(|v| v.is_finite())
            && states.iter().all(|v| v.is_finite())
            && outputs.iter().all(|v| v.is_finite())
            && sched.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("trajectory contains non-finite values"));
        }
        let names = ChannelNames::generic(controls.nrows(), states.nrows(), outputs.nrows(), sched.is_some());
        Ok(Trajectory {
            times,
            controls,
            states,
            outputs,
            sched,
            names,
        })
    }

    /// Replaces the channel names. Name counts must match the matrix rows.
    pub fn with_names(mut self, names: ChannelNames) -> Self {
        assert_eq!(names.controls.len(), self.controls.nrows(), "control name count");
        assert_eq!(names.states.len(), self.states.nrows(), "state name count");
        assert_eq!(names.outputs.len(), self.outputs.nrows(), "output name count");
        assert_eq!(names.sched.is_some(), self.sched.is_some(), "scheduling name presence");
        self.names = names;
        self
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn controls(&self) -> &DMatrix<f64> {
        &self.controls
    }

    pub fn states(&self) -> &DMatrix<f64> {
        &self.states
    }

    pub fn outputs(&self) -> &DMatrix<f64> {
        &self.outputs
    }

    pub fn sched(&self) -> Option<&[f64]> {
        self.sched.as_deref()
    }

    pub fn names(&self) -> &ChannelNames {
        &self.names
    }

    pub fn n_controls(&self) -> usize {
        self.controls.nrows()
    }

    pub fn n_states(&self) -> usize {
        self.states.nrows()
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.nrows()
    }
}

/// Maps file column names to trajectory roles. Unmapped columns are ignored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelMap {
    pub time: String,
    #[serde(default)]
    pub controls: Vec<String>,
    #[serde(default)]
    pub states: Vec<String>,
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default)]
    pub sched: Option<String>,
}

impl ChannelMap {
    /// The map that reads back a file written by [`export_timeseries`].
    pub fn from_names(names: &ChannelNames) -> Self {
        ChannelMap {
            time: "time".into(),
            controls: names.controls.clone(),
            states: names.states.clone(),
            outputs: names.outputs.clone(),
            sched: names.sched.clone(),
        }
    }
}

/// Reads a comma-separated table with a header row. Rows and columns in
/// error messages are 1-based; row 1 is the first data row.
pub fn import_timeseries(path: impl AsRef<Path>, map: &ChannelMap) -> Result<Trajectory> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_timeseries(&text, map, &path.display().to_string())
}

pub(crate) fn parse_timeseries(text: &str, map: &ChannelMap, source: &str) -> Result<Trajectory> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::invalid(format!("{source}: empty file")))?
        .split(',')
        .map(str::trim)
        .collect();
    let find = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::MissingChannel(name.to_string()))
    };
    let time_col = find(&map.time)?;
    let control_cols = map.controls.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
    let state_cols = map.states.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
    let output_cols = map.outputs.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
    let sched_col = map.sched.as_deref().map(find).transpose()?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != header.len() {
            return Err(Error::Parse {
                path: source.to_string(),
                row: r + 1,
                column: cells.len().min(header.len()) + 1,
                message: format!("expected {} cells, found {}", header.len(), cells.len()),
            });
        }
        let mut values = Vec::with_capacity(cells.len());
        for (c, cell) in cells.iter().enumerate() {
            // unmapped columns are parsed too so malformed files fail loudly
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: source.to_string(),
                row: r + 1,
                column: c + 1,
                message: format!("`{cell}` is not a number"),
            })?;
            values.push(v);
        }
        if let Some(prev) = rows.last() {
            if !(values[time_col] > prev[time_col]) {
                return Err(Error::NonMonotoneTime { row: r + 1 });
            }
        }
        rows.push(values);
    }

    let n = rows.len();
    let gather = |cols: &[usize]| DMatrix::from_fn(cols.len(), n, |i, k| rows[k][cols[i]]);
    let times = rows.iter().map(|r| r[time_col]).collect();
    let sched = sched_col.map(|c| rows.iter().map(|r| r[c]).collect());
    let traj = Trajectory::new(
        times,
        gather(&control_cols),
        gather(&state_cols),
        gather(&output_cols),
        sched,
    )?;
    Ok(traj.with_names(ChannelNames {
        controls: map.controls.clone(),
        states: map.states.clone(),
        outputs: map.outputs.clone(),
        sched: map.sched.clone(),
    }))
}

/// Formats a trajectory as a comma-separated table with a `time` column first.
pub fn format_timeseries(traj: &Trajectory) -> Result<String> {
    if traj.is_empty() {
        return Err(Error::invalid("refusing to export an empty trajectory"));
    }
    let names = traj.names();
    let mut header = vec!["time"];
    header.extend(names.controls.iter().map(String::as_str));
    header.extend(names.states.iter().map(String::as_str));
    header.extend(names.outputs.iter().map(String::as_str));
    if let Some(s) = &names.sched {
        header.push(s);
    }
    let mut out = header.join(",");
    out.push('\n');
    for k in 0..traj.len() {
        out.push_str(&fmt_f64(traj.times[k]));
        for m in [&traj.controls, &traj.states, &traj.outputs] {
            for v in m.column(k).iter() {
                let _ = write!(out, ",{}", fmt_f64(*v));
            }
        }
        if let Some(s) = &traj.sched {
            let _ = write!(out, ",{}", fmt_f64(s[k]));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn export_timeseries(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = format_timeseries(traj)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trajectory-granular partition, indices ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitLabel {
    Train,
    Test,
}

impl Split {
    pub fn labels(&self) -> Vec<SplitLabel> {
        let n = self.train.len() + self.test.len();
        let mut labels = vec![SplitLabel::Test; n];
        for &i in &self.train {
            labels[i] = SplitLabel::Train;
        }
        labels
    }
}

/// Seeded shuffle of `n_trajectories` indices; the first `⌈fraction·n⌉`
/// (kept within `[1, n − 1]`) are training trajectories.
pub fn split_train_test(n_trajectories: usize, train_fraction: f64, seed: u64) -> Result<Split> {
    if n_trajectories < 2 {
        return Err(Error::invalid(format!(
            "a train/test split needs at least 2 trajectories, got {n_trajectories}"
        )));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = n_trajectories;
    let n_train = ((train_fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

/// Row layout of the stacked input `I = [u; x (; w)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputLayout {
    pub n_controls: usize,
    pub n_states: usize,
    pub sched: bool,
}

impl InputLayout {
    /// Rows seen by the linear map (controls and states).
    pub fn n_linear(&self) -> usize {
        self.n_controls + self.n_states
    }

    pub fn n_rows(&self) -> usize {
        self.n_linear() + usize::from(self.sched)
    }
}

/// Column provenance within an assembled dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub trajectory: usize,
    pub time_index: usize,
}

/// Stacked `⟨I, Ẋ, Y⟩` samples over many trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeDataset {
    pub layout: InputLayout,
    /// `[controls; states (; sched)]`, one column per sample.
    pub inputs: DMatrix<f64>,
    pub state_derivs: DMatrix<f64>,
    pub outputs: DMatrix<f64>,
    pub provenance: Vec<Provenance>,
    /// Per-trajectory split label.
    pub split: Vec<SplitLabel>,
}

impl DerivativeDataset {
    pub fn n_columns(&self) -> usize {
        self.inputs.ncols()
    }

    /// Control and state rows only.
    pub fn linear_inputs(&self) -> DMatrixView<'_, f64> {
        self.inputs.rows(0, self.layout.n_linear())
    }

    /// Scheduling values per column, when assembled with them.
    pub fn sched(&self) -> Option<Vec<f64>> {
        self.layout
            .sched
            .then(|| self.inputs.row(self.layout.n_linear()).iter().copied().collect())
    }

    /// Dataset restricted to the columns of trajectories carrying `label`.
    pub fn select(&self, label: SplitLabel) -> DerivativeDataset {
        let cols: Vec<usize> = (0..self.n_columns())
            .filter(|&c| self.split[self.provenance[c].trajectory] == label)
            .collect();
        let pick = |m: &DMatrix<f64>| crate::mat::select_columns(m, &cols);
        DerivativeDataset {
            layout: self.layout,
            inputs: pick(&self.inputs),
            state_derivs: pick(&self.state_derivs),
            outputs: pick(&self.outputs),
            provenance: cols.iter().map(|&c| self.provenance[c]).collect(),
            split: self.split.clone(),
        }
    }

    pub fn with_split(mut self, split: &Split) -> Result<Self> {
        check_len("split labels", self.split.len(), split.train.len() + split.test.len())?;
        self.split = split.labels();
        Ok(self)
    }
}

/// Concatenates trajectories (in order) into one dataset. `derivs[i]` holds
/// the state derivatives of `trajectories[i]` on its own grid. All
/// trajectories are labelled as training data.
pub fn assemble(
    trajectories: &[Trajectory],
    derivs: &[DMatrix<f64>],
    include_sched: bool,
) -> Result<DerivativeDataset> {
    check_len("derivative matrices", trajectories.len(), derivs.len())?;
    let first = trajectories
        .first()
        .ok_or_else(|| Error::invalid("no trajectories to assemble"))?;
    let layout = InputLayout {
        n_controls: first.n_controls(),
        n_states: first.n_states(),
        sched: include_sched,
    };
    let ny = first.n_outputs();
    let total: usize = trajectories.iter().map(Trajectory::len).sum();

    let mut inputs = DMatrix::zeros(layout.n_rows(), total);
    let mut state_derivs = DMatrix::zeros(layout.n_states, total);
    let mut outputs = DMatrix::zeros(ny, total);
    let mut provenance = Vec::with_capacity(total);
    let mut c0 = 0;
    for (i, (traj, d)) in trajectories.iter().zip(derivs).enumerate() {
        let n = traj.len();
        check_len("trajectory controls", layout.n_controls, traj.n_controls())?;
        check_len("trajectory states", layout.n_states, traj.n_states())?;
        check_len("trajectory outputs", ny, traj.n_outputs())?;
        check_len("derivative rows", layout.n_states, d.nrows())?;
        check_len("derivative columns", n, d.ncols())?;
        let (nu, nx) = (layout.n_controls, layout.n_states);
        inputs.view_mut((0, c0), (nu, n)).copy_from(traj.controls());
        inputs.view_mut((nu, c0), (nx, n)).copy_from(traj.states());
        if include_sched {
            let s = traj
                .sched()
                .ok_or_else(|| Error::invalid(format!("trajectory {i} has no scheduling channel")))?;
            for (k, v) in s.iter().enumerate() {
                inputs[(nu + nx, c0 + k)] = *v;
            }
        }
        state_derivs.view_mut((0, c0), (nx, n)).copy_from(d);
        outputs.view_mut((0, c0), (ny, n)).copy_from(traj.outputs());
        provenance.extend((0..n).map(|k| Provenance {
            trajectory: i,
            time_index: k,
        }));
        c0 += n;
    }
    Ok(DerivativeDataset {
        layout,
        inputs,
        state_derivs,
        outputs,
        provenance,
        split: vec![SplitLabel::Train; trajectories.len()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Trajectory {
        let times: Vec<f64> = (0..n).map(|k| k as f64 * 0.1).collect();
        let states = DMatrix::from_fn(1, n, |_, k| k as f64);
        Trajectory::new(times, DMatrix::zeros(1, n), states, DMatrix::zeros(0, n), None).unwrap()
    }

    #[test]
    fn three_row_file() {
        let text = "time,x\n0,1\n0.1,2\n0.2,3\n";
        let map = ChannelMap {
            time: "time".into(),
            controls: vec![],
            states: vec!["x".into()],
            outputs: vec![],
            sched: None,
        };
        let t = parse_timeseries(text, &map, "mem").unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.states()[(0, 2)], 3.0);
    }

    #[test]
    fn non_monotone_time_names_row_three() {
        let text = "time,x\n0,1\n0.2,2\n0.1,3\n";
        let map = ChannelMap {
            time: "time".into(),
            controls: vec![],
            states: vec!["x".into()],
            outputs: vec![],
            sched: None,
        };
        match parse_timeseries(text, &map, "mem") {
            Err(Error::NonMonotoneTime { row }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_cell_reports_location() {
        let map = ChannelMap {
            time: "t".into(),
            controls: vec![],
            states: vec!["x".into()],
            outputs: vec![],
            sched: None,
        };
        match parse_timeseries("t,x\n0,1\n1,abc\n", &map, "mem") {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (2, 2)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_timeseries("t,y\n0,1\n", &map, "mem"),
            Err(Error::MissingChannel(c)) if c == "x"
        ));
    }

    #[test]
    fn empty_export_is_refused() {
        let t = Trajectory::new(
            vec![],
            DMatrix::zeros(1, 0),
            DMatrix::zeros(1, 0),
            DMatrix::zeros(0, 0),
            None,
        )
        .unwrap();
        assert!(format_timeseries(&t).is_err());
    }

    #[test]
    fn split_counts_and_determinism() {
        let s = split_train_test(100, 0.8, 7).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (80, 20));
        assert_eq!(s, split_train_test(100, 0.8, 7).unwrap());
        let s = split_train_test(2, 0.5, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (1, 1));
        assert!(split_train_test(1, 0.5, 1).is_err());
        assert!(split_train_test(5, 1.0, 1).is_err());
    }

    #[test]
    fn assemble_concatenates_in_order() {
        let (a, b) = (ramp(5), ramp(7));
        let d = [a.states().clone(), b.states().clone()];
        let ds = assemble(&[a, b], &d, false).unwrap();
        assert_eq!(ds.n_columns(), 12);
        assert_eq!(
            ds.provenance[5],
            Provenance {
                trajectory: 1,
                time_index: 0
            }
        );
        assert_eq!(ds.inputs[(1, 4)], 4.0);
        assert_eq!(ds.inputs[(1, 5)], 0.0);
    }

    #[test]
    fn assemble_rejects_column_mismatch() {
        let a = ramp(5);
        assert!(assemble(&[a], &[DMatrix::zeros(1, 4)], false).is_err());
    }
}
